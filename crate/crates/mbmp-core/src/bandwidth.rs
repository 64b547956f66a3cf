//! Airtime accounting and smoothed available-bandwidth estimation.
//!
//! A CBR flow of `rate` packets/second occupies the channel for
//! `packet_airtime` seconds per packet (handshake, payload, acknowledgment,
//! and mean backoff), so each transmitting hop consumes
//! `rate * packet_airtime * channel_capacity` bits/second of raw channel —
//! the flow's *consumed bandwidth* `W`. Nodes judge spare capacity with an
//! exponentially smoothed idle-time estimator: once per period the fraction
//! of idle airtime is folded into the previous estimate, which makes the
//! estimate robust against transient bursts at the cost of a few periods of
//! lag after a load change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NodeId;

/// Identifier of a flow within one scenario. Ids are dense: `0..flows.len()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub usize);

impl std::fmt::Display for FlowId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A constant-bit-rate traffic demand between two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: FlowId,
    pub src: NodeId,
    pub dst: NodeId,
    /// Packets per second.
    pub rate: f64,
    /// Payload size in bytes.
    pub packet_size: u32,
    /// Seconds from simulation start at which admission is attempted.
    pub start_time: f64,
    /// Optional teardown time; `None` runs to the end of the simulation.
    pub end_time: Option<f64>,
}

impl FlowSpec {
    /// Application-level offered rate in bits/second (payload only, no MAC
    /// overhead). This is the demand throughput metrics compare against.
    pub fn offered_rate_bps(&self) -> f64 {
        self.rate * f64::from(self.packet_size) * 8.0
    }
}

/// MAC timing constants used to convert packet sizes into airtime. All times
/// are in seconds, sizes in bits, capacity in bits/second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacTimingConfig {
    pub t_difs: f64,
    pub t_sifs: f64,
    /// Airtime of the request-to-send frame including preamble.
    pub t_rts: f64,
    /// Airtime of the clear-to-send frame including preamble.
    pub t_cts: f64,
    /// Airtime of the acknowledgment frame including preamble.
    pub t_ack: f64,
    /// Network plus link-layer header bits added to every payload.
    pub header_bits: u64,
    /// Mean contention backoff charged to every packet.
    pub mean_backoff: f64,
    /// Raw channel capacity in bits/second.
    pub channel_capacity: f64,
}

impl Default for MacTimingConfig {
    fn default() -> Self {
        MacTimingConfig {
            t_difs: 50e-6,
            t_sifs: 10e-6,
            t_rts: 272e-6,
            t_cts: 248e-6,
            t_ack: 248e-6,
            header_bits: 384,
            mean_backoff: 400e-6,
            channel_capacity: 2.0e6,
        }
    }
}

impl MacTimingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        for (name, v) in [
            ("mac.t_difs", self.t_difs),
            ("mac.t_sifs", self.t_sifs),
            ("mac.t_rts", self.t_rts),
            ("mac.t_cts", self.t_cts),
            ("mac.t_ack", self.t_ack),
            ("mac.mean_backoff", self.mean_backoff),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                issues.push(format!("{name}: must be finite and >= 0"));
            }
        }
        if !(self.channel_capacity > 0.0) {
            issues.push("mac.channel_capacity: must be > 0".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

/// Channel time occupied by one data packet of `packet_size` bytes,
/// including the four-way handshake, inter-frame spaces, and mean backoff:
/// `difs + rts + cts + (payload + header) / capacity + ack + 3 * sifs + backoff`.
pub fn packet_airtime(cfg: &MacTimingConfig, packet_size: u32) -> f64 {
    let payload_bits = f64::from(packet_size) * 8.0 + cfg.header_bits as f64;
    cfg.t_difs
        + cfg.t_rts
        + cfg.t_cts
        + payload_bits / cfg.channel_capacity
        + cfg.t_ack
        + 3.0 * cfg.t_sifs
        + cfg.mean_backoff
}

/// Raw channel bandwidth one transmitting hop of `spec` consumes:
/// `rate * packet_airtime * channel_capacity` bits/second. The result may
/// exceed `channel_capacity`; callers reject such flows as infeasible.
pub fn flow_bandwidth(cfg: &MacTimingConfig, spec: &FlowSpec) -> f64 {
    spec.rate * packet_airtime(cfg, spec.packet_size) * cfg.channel_capacity
}

/// Smoothed available-bandwidth estimator.
///
/// Once per `period` the observed idle fraction is folded into the running
/// estimate: `estimate = alpha * estimate + (1 - alpha) * (idle / period) *
/// capacity`. `alpha` close to 1 weights history; `alpha = 0` tracks the
/// latest period exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthEstimator {
    pub alpha: f64,
    pub period: f64,
    pub capacity: f64,
    estimate: f64,
    idle_accumulator: f64,
    /// Absolute time up to which the channel has been observed.
    time: f64,
    /// Time already consumed inside the current period.
    period_elapsed: f64,
}

const TIME_EPS: f64 = 1e-9;

impl BandwidthEstimator {
    /// `initial` seeds the estimate; it is clamped into `[0, capacity]`.
    pub fn new(alpha: f64, period: f64, capacity: f64, initial: f64) -> Self {
        BandwidthEstimator {
            alpha,
            period,
            capacity,
            estimate: initial.clamp(0.0, capacity),
            idle_accumulator: 0.0,
            time: 0.0,
            period_elapsed: 0.0,
        }
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    /// Overrides the current estimate (clamped into range). Used to preload
    /// scripted starting conditions.
    pub fn preload(&mut self, value: f64) {
        self.estimate = value.clamp(0.0, self.capacity);
    }

    /// Applies one full period with `idle_time` seconds of idle airtime and
    /// returns the new estimate. `idle_time` outside `[0, period]` is an
    /// error.
    pub fn update(&mut self, idle_time: f64) -> Result<f64> {
        if !(idle_time >= -TIME_EPS && idle_time <= self.period + TIME_EPS) {
            return Err(Error::InvalidInterval(format!(
                "idle time {idle_time} outside [0, {}]",
                self.period
            )));
        }
        let idle = idle_time.clamp(0.0, self.period);
        self.estimate =
            self.alpha * self.estimate + (1.0 - self.alpha) * (idle / self.period) * self.capacity;
        Ok(self.estimate)
    }

    /// Feeds a span of observed channel time. `interval` must start where the
    /// previous observation ended; `busy` lists busy spans, which are clipped
    /// to the interval but must not overlap one another. Every period
    /// boundary crossed inside the interval folds the accumulated idle time
    /// into the estimate.
    pub fn observe_channel(&mut self, interval: (f64, f64), busy: &[(f64, f64)]) -> Result<()> {
        let (t0, t1) = interval;
        if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidInterval(format!("bad interval ({t0}, {t1})")));
        }
        if (t0 - self.time).abs() > 1e-6 {
            return Err(Error::InvalidInterval(format!(
                "interval starts at {t0} but estimator time is {}",
                self.time
            )));
        }
        let mut clipped: Vec<(f64, f64)> = Vec::with_capacity(busy.len());
        for &(b0, b1) in busy {
            if !(b1 >= b0) {
                return Err(Error::InvalidInterval(format!("bad busy span ({b0}, {b1})")));
            }
            let c0 = b0.max(t0);
            let c1 = b1.min(t1);
            if c1 > c0 {
                clipped.push((c0, c1));
            }
        }
        clipped.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in clipped.windows(2) {
            if w[1].0 < w[0].1 - TIME_EPS {
                return Err(Error::OverlappingBusy(w[1].0));
            }
        }

        let mut t = t0;
        while t1 - t > TIME_EPS {
            let to_boundary = self.period - self.period_elapsed;
            let chunk = to_boundary.min(t1 - t);
            let busy_in_chunk: f64 = clipped
                .iter()
                .map(|&(b0, b1)| (b1.min(t + chunk) - b0.max(t)).max(0.0))
                .sum();
            self.idle_accumulator += (chunk - busy_in_chunk).max(0.0);
            self.period_elapsed += chunk;
            t += chunk;
            if self.period - self.period_elapsed <= TIME_EPS {
                let idle = self.idle_accumulator.min(self.period);
                self.update(idle)?;
                self.idle_accumulator = 0.0;
                self.period_elapsed = 0.0;
            }
        }
        self.time = t1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_overhead(capacity: f64) -> MacTimingConfig {
        MacTimingConfig {
            t_difs: 0.0,
            t_sifs: 0.0,
            t_rts: 0.0,
            t_cts: 0.0,
            t_ack: 0.0,
            header_bits: 0,
            mean_backoff: 0.0,
            channel_capacity: capacity,
        }
    }

    fn flow(rate: f64, packet_size: u32) -> FlowSpec {
        FlowSpec {
            id: FlowId(0),
            src: NodeId(0),
            dst: NodeId(1),
            rate,
            packet_size,
            start_time: 0.0,
            end_time: None,
        }
    }

    // === packet airtime ===

    #[test]
    fn airtime_reduces_to_serialization_time_without_overhead() {
        // 2 Mbit payload on a 2 Mbps channel with every constant zeroed.
        let cfg = zero_overhead(2.0e6);
        let t = packet_airtime(&cfg, 250_000);
        assert!((t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn airtime_of_default_profile_is_in_the_millisecond_band() {
        let cfg = MacTimingConfig::default();
        let t = packet_airtime(&cfg, 512);
        assert!((t - 3.488e-3).abs() < 1e-9);
        assert!(t > 3.1e-3 && t < 3.9e-3);
    }

    // === flow bandwidth ===

    #[test]
    fn flow_bandwidth_is_rate_times_airtime_times_capacity() {
        let cfg = zero_overhead(2.0e6);
        let w = flow_bandwidth(&cfg, &flow(1.0, 2500));
        assert!((w - 20_000.0).abs() < 1e-9);
    }

    #[test]
    fn heavy_voice_like_flow_lands_near_930_kbps() {
        let cfg = MacTimingConfig::default();
        let w = flow_bandwidth(&cfg, &flow(133.0, 512));
        assert!((837_000.0..=1_023_000.0).contains(&w), "w = {w}");
    }

    #[test]
    fn infeasible_specs_may_exceed_capacity() {
        let cfg = MacTimingConfig::default();
        let w = flow_bandwidth(&cfg, &flow(1000.0, 512));
        assert!(w > cfg.channel_capacity);
    }

    // === estimator: single-period updates ===

    #[test]
    fn update_blends_history_and_fresh_idle_fraction() {
        let mut est = BandwidthEstimator::new(0.5, 1.0, 2.0e6, 1.2e6);
        let v = est.update(0.35).unwrap();
        assert!((v - 0.95e6).abs() < 1e-6);
    }

    #[test]
    fn warm_up_from_zero_reaches_half_capacity_after_one_idle_period() {
        let mut est = BandwidthEstimator::new(0.5, 1.0, 2.0e6, 0.0);
        let v = est.update(1.0).unwrap();
        assert!((v - 1.0e6).abs() < 1e-6);
    }

    #[test]
    fn fully_busy_periods_halve_the_estimate() {
        let mut est = BandwidthEstimator::new(0.5, 1.0, 2.0e6, 1.6e6);
        assert!((est.update(0.0).unwrap() - 0.8e6).abs() < 1e-6);
        assert!((est.update(0.0).unwrap() - 0.4e6).abs() < 1e-6);
    }

    #[test]
    fn update_rejects_idle_time_outside_the_period() {
        let mut est = BandwidthEstimator::new(0.5, 1.0, 2.0e6, 0.0);
        assert!(est.update(1.5).is_err());
        assert!(est.update(-0.1).is_err());
    }

    // === estimator: streamed observation ===

    #[test]
    fn observe_channel_folds_busy_spans_into_period_updates() {
        let mut est = BandwidthEstimator::new(0.5, 1.0, 2.0e6, 2.0e6);
        // 0.4 s busy inside one period: idle 0.6 -> 0.5*2e6 + 0.5*1.2e6.
        est.observe_channel((0.0, 1.0), &[(0.2, 0.5), (0.9, 1.0)]).unwrap();
        assert!((est.estimate() - 1.6e6).abs() < 1e-6);
    }

    #[test]
    fn observe_channel_clips_busy_spans_to_the_interval() {
        let mut est = BandwidthEstimator::new(0.5, 1.0, 2.0e6, 2.0e6);
        // Span starts before the window and ends after it: only 1 s counts.
        est.observe_channel((0.0, 1.0), &[(-5.0, 2.0)]).unwrap();
        assert!((est.estimate() - 1.0e6).abs() < 1e-6);
    }

    #[test]
    fn observe_channel_rejects_overlapping_busy_spans() {
        let mut est = BandwidthEstimator::new(0.5, 1.0, 2.0e6, 2.0e6);
        let err = est.observe_channel((0.0, 1.0), &[(0.1, 0.5), (0.4, 0.8)]);
        assert!(matches!(err, Err(Error::OverlappingBusy(_))));
    }

    #[test]
    fn observe_channel_requires_continuity() {
        let mut est = BandwidthEstimator::new(0.5, 1.0, 2.0e6, 2.0e6);
        est.observe_channel((0.0, 0.5), &[]).unwrap();
        assert!(est.observe_channel((0.7, 1.0), &[]).is_err());
    }

    #[test]
    fn observe_channel_spans_multiple_periods() {
        let mut est = BandwidthEstimator::new(0.5, 1.0, 2.0e6, 0.0);
        est.observe_channel((0.0, 3.0), &[]).unwrap();
        // Three idle periods from zero: 2e6 * (1 - 0.5^3).
        assert!((est.estimate() - 1.75e6).abs() < 1e-6);
    }

    // === estimator: convergence ===

    #[test]
    fn single_flow_steps_settle_within_five_periods() {
        // A load change of one flow's worth of bandwidth (under half the
        // channel) leaves the estimate within 2% of capacity of the new
        // truth after five periods.
        let capacity = 2.0e6;
        let w = 927_808.0;
        let mut est = BandwidthEstimator::new(0.5, 1.0, capacity, capacity);
        let truth = capacity - w;
        let idle = truth / capacity;
        for _ in 0..5 {
            est.update(idle).unwrap();
        }
        assert!((est.estimate() - truth).abs() <= 0.02 * capacity);
    }
}
