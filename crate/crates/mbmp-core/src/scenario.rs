//! Scenario files: the single JSON document describing one experiment.
//!
//! Every section is optional except `duration` and `topology`; omitted
//! sections fall back to the defaults used throughout the crate. Loading
//! rejects unknown keys outright and `validate` collects every problem it
//! can find instead of stopping at the first, so a bad file is fixed in
//! one round trip.

use serde::{Deserialize, Serialize};

use crate::bandwidth::{flow_bandwidth, FlowId, FlowSpec, MacTimingConfig};
use crate::error::{Error, Result};
use crate::geometry::{Arena, MobilityConfig, NodeId, Position, RadioConfig, Topology};
use crate::protocol::ProtocolConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Simulated seconds.
    pub duration: f64,
    /// Default RNG seed when the caller does not supply one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arena: Option<ArenaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radio: Option<RadioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac: Option<MacSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cneighbor: Option<CNeighborSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility: Option<MobilitySpec>,
    pub topology: TopologySpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<FlowEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_gen: Option<FlowGenSpec>,
    /// Metrics sampling window, seconds (default 1.0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    /// When true, control messages consume modeled airtime and perturb the
    /// bandwidth estimators (default false).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_consumes_airtime: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArenaSpec {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_range: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cs_range: Option<f64>,
    /// Defaults to twice the carrier-sense range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ncs_range: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_capacity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_difs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_sifs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_rts: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_cts: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ack: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header_bits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_backoff: Option<f64>,
    /// Must match the radio section's capacity when both are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_capacity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    /// Starting estimate as a fraction of capacity (default 1.0:
    /// a quiet channel looks fully available).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_fraction: Option<f64>,
    /// Per-node overrides of the starting estimate, bits/second.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub preload: Vec<PreloadEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreloadEntry {
    pub node: usize,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CNeighborSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop_limit: Option<u32>,
    /// Contention-set entries older than this are dropped; `None` keeps
    /// them forever.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_ttl: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_budget: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_timeout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reservation_ttl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admission_deadline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_backup_routes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_budget: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hello_interval: Option<f64>,
    /// One-hop control-message latency, seconds (default 1 ms).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_latency: Option<f64>,
    /// Congestion-triggered re-flooding. Only the no-admission baseline
    /// acts on it; see the engine's overload check for why.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overload_retry: Option<OverloadRetrySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverloadRetrySpec {
    #[serde(default)]
    pub enabled: bool,
    /// Utilization above which an admitted flow tries to re-route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Minimum seconds between retries of one flow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cooldown: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverloadRetryConfig {
    pub enabled: bool,
    pub threshold: f64,
    pub cooldown: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilitySpec {
    /// Present-but-disabled lets a file keep its parameters handy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pause_time: Option<f64>,
    /// Movement/beacon tick, seconds (default 0.1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick: Option<f64>,
}

/// Either explicit coordinates or a seeded uniform placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomTopologySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomTopologySpec {
    pub nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowEntry {
    pub src: usize,
    pub dst: usize,
    /// Packets per second.
    pub rate: f64,
    /// Payload bytes.
    pub packet_size: u32,
    pub start_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time: Option<f64>,
}

/// Randomly generated traffic: `count` flows between distinct random
/// pairs, with rate, size, and start time drawn uniformly from the given
/// inclusive ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowGenSpec {
    pub count: usize,
    pub rate: [f64; 2],
    pub packet_size: [u32; 2],
    pub start: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub alpha: f64,
    pub period: f64,
    pub initial_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CNeighborConfig {
    pub hop_limit: u32,
    pub entry_ttl: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityRun {
    pub config: MobilityConfig,
    pub tick: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn effective_arena(&self) -> Arena {
        match self.arena {
            Some(a) => Arena { width: a.width, height: a.height },
            None => Arena::default(),
        }
    }

    pub fn effective_radio(&self) -> RadioConfig {
        let d = RadioConfig::default();
        let r = self.radio.unwrap_or(RadioSpec {
            tx_range: None,
            cs_range: None,
            ncs_range: None,
            channel_capacity: None,
        });
        let cs = r.cs_range.unwrap_or(d.cs_range);
        RadioConfig {
            tx_range: r.tx_range.unwrap_or(d.tx_range),
            cs_range: cs,
            ncs_range: r.ncs_range.unwrap_or(2.0 * cs),
            channel_capacity: r.channel_capacity.unwrap_or(d.channel_capacity),
        }
    }

    pub fn effective_mac(&self) -> MacTimingConfig {
        let d = MacTimingConfig::default();
        let radio = self.effective_radio();
        let m = self.mac.unwrap_or(MacSpec {
            t_difs: None,
            t_sifs: None,
            t_rts: None,
            t_cts: None,
            t_ack: None,
            header_bits: None,
            mean_backoff: None,
            channel_capacity: None,
        });
        MacTimingConfig {
            t_difs: m.t_difs.unwrap_or(d.t_difs),
            t_sifs: m.t_sifs.unwrap_or(d.t_sifs),
            t_rts: m.t_rts.unwrap_or(d.t_rts),
            t_cts: m.t_cts.unwrap_or(d.t_cts),
            t_ack: m.t_ack.unwrap_or(d.t_ack),
            header_bits: m.header_bits.unwrap_or(d.header_bits),
            mean_backoff: m.mean_backoff.unwrap_or(d.mean_backoff),
            channel_capacity: m.channel_capacity.unwrap_or(radio.channel_capacity),
        }
    }

    pub fn effective_estimator(&self) -> EstimatorConfig {
        let e = self.estimator.clone().unwrap_or(EstimatorSpec {
            alpha: None,
            period: None,
            initial_fraction: None,
            preload: Vec::new(),
        });
        EstimatorConfig {
            alpha: e.alpha.unwrap_or(0.5),
            period: e.period.unwrap_or(1.0),
            initial_fraction: e.initial_fraction.unwrap_or(1.0),
        }
    }

    pub fn estimator_preloads(&self) -> Vec<(NodeId, f64)> {
        self.estimator
            .as_ref()
            .map(|e| e.preload.iter().map(|p| (NodeId(p.node), p.bandwidth)).collect())
            .unwrap_or_default()
    }

    pub fn effective_cneighbor(&self) -> CNeighborConfig {
        let c = self.cneighbor.unwrap_or(CNeighborSpec { hop_limit: None, entry_ttl: None });
        CNeighborConfig { hop_limit: c.hop_limit.unwrap_or(2), entry_ttl: c.entry_ttl }
    }

    pub fn effective_protocol(&self) -> ProtocolConfig {
        let d = ProtocolConfig::default();
        let p = self.protocol.unwrap_or(ProtocolSpec {
            query_budget: None,
            query_timeout: None,
            reservation_ttl: None,
            admission_deadline: None,
            max_backup_routes: None,
            retry_budget: None,
            hello_interval: None,
            control_latency: None,
            overload_retry: None,
        });
        ProtocolConfig {
            hop_limit: self.effective_cneighbor().hop_limit,
            query_budget: p.query_budget.unwrap_or(d.query_budget),
            query_timeout: p.query_timeout.unwrap_or(d.query_timeout),
            reservation_ttl: p.reservation_ttl.unwrap_or(d.reservation_ttl),
            admission_deadline: p.admission_deadline.unwrap_or(d.admission_deadline),
            max_backup_routes: p.max_backup_routes.unwrap_or(d.max_backup_routes),
            retry_budget: p.retry_budget.unwrap_or(d.retry_budget),
            hello_interval: p.hello_interval,
        }
    }

    pub fn control_latency(&self) -> f64 {
        self.protocol.and_then(|p| p.control_latency).unwrap_or(1e-3)
    }

    pub fn effective_overload_retry(&self) -> OverloadRetryConfig {
        let o = self
            .protocol
            .and_then(|p| p.overload_retry)
            .unwrap_or(OverloadRetrySpec { enabled: false, threshold: None, cooldown: None });
        OverloadRetryConfig {
            enabled: o.enabled,
            threshold: o.threshold.unwrap_or(0.9),
            cooldown: o.cooldown.unwrap_or(3.0),
        }
    }

    pub fn effective_mobility(&self) -> Option<MobilityRun> {
        let m = self.mobility?;
        if !m.enabled.unwrap_or(true) {
            return None;
        }
        let d = MobilityConfig::default();
        Some(MobilityRun {
            config: MobilityConfig {
                min_speed: m.min_speed.unwrap_or(d.min_speed),
                max_speed: m.max_speed.unwrap_or(d.max_speed),
                pause_time: m.pause_time.unwrap_or(d.pause_time),
            },
            tick: m.tick.unwrap_or(0.1),
        })
    }

    pub fn effective_sample_interval(&self) -> f64 {
        self.sample_interval.unwrap_or(1.0)
    }

    pub fn control_airtime_enabled(&self) -> bool {
        self.control_consumes_airtime.unwrap_or(false)
    }

    pub fn node_count(&self) -> usize {
        if let Some(p) = &self.topology.positions {
            p.len()
        } else if let Some(r) = &self.topology.random {
            r.nodes
        } else {
            0
        }
    }

    /// Places nodes: explicit coordinates verbatim, or uniform over the
    /// arena from `rng`.
    pub fn materialize_topology<R: rand::Rng>(&self, rng: &mut R) -> Topology {
        let arena = self.effective_arena();
        let radio = self.effective_radio();
        let positions = if let Some(p) = &self.topology.positions {
            p.iter().map(|&[x, y]| Position { x, y }).collect()
        } else {
            let n = self.topology.random.map(|r| r.nodes).unwrap_or(0);
            (0..n)
                .map(|_| Position {
                    x: rng.gen_range(0.0..=arena.width),
                    y: rng.gen_range(0.0..=arena.height),
                })
                .collect()
        };
        Topology { positions, radio, arena }
    }

    /// Expands explicit and generated traffic into flow specs with dense
    /// ids (explicit flows first).
    pub fn materialize_flows<R: rand::Rng>(&self, rng: &mut R) -> Vec<FlowSpec> {
        let n = self.node_count();
        let mut flows: Vec<FlowSpec> = self
            .flows
            .iter()
            .enumerate()
            .map(|(i, f)| FlowSpec {
                id: FlowId(i),
                src: NodeId(f.src),
                dst: NodeId(f.dst),
                rate: f.rate,
                packet_size: f.packet_size,
                start_time: f.start_time,
                end_time: f.end_time,
            })
            .collect();
        if let Some(g) = self.flow_gen {
            for k in 0..g.count {
                let src = rng.gen_range(0..n);
                let mut dst = rng.gen_range(0..n - 1);
                if dst >= src {
                    dst += 1;
                }
                flows.push(FlowSpec {
                    id: FlowId(self.flows.len() + k),
                    src: NodeId(src),
                    dst: NodeId(dst),
                    rate: rng.gen_range(g.rate[0]..=g.rate[1]),
                    packet_size: rng.gen_range(g.packet_size[0]..=g.packet_size[1]),
                    start_time: rng.gen_range(g.start[0]..=g.start[1]),
                    end_time: None,
                });
            }
        }
        flows
    }

    /// Collects every detectable problem; `Ok` means the scenario can run.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();

        if !(self.duration > 0.0) || !self.duration.is_finite() {
            issues.push("duration: must be finite and > 0".to_string());
        }
        if let Some(si) = self.sample_interval {
            if !(si > 0.0) || !si.is_finite() {
                issues.push("sample_interval: must be finite and > 0".to_string());
            }
        }
        if let Some(a) = self.arena {
            if !(a.width > 0.0) || !(a.height > 0.0) {
                issues.push("arena: width and height must be > 0".to_string());
            }
        }

        let radio = self.effective_radio();
        if let Err(Error::Config(mut v)) = radio.validate() {
            issues.append(&mut v);
        }
        let mac = self.effective_mac();
        if let Err(Error::Config(mut v)) = mac.validate() {
            issues.append(&mut v);
        }
        if let Some(m) = self.mac {
            if let Some(cap) = m.channel_capacity {
                if (cap - radio.channel_capacity).abs() > 1e-6 {
                    issues.push(format!(
                        "mac.channel_capacity: {cap} disagrees with radio channel capacity {}",
                        radio.channel_capacity
                    ));
                }
            }
        }
        if let Err(Error::Config(mut v)) = self.effective_protocol().validate() {
            issues.append(&mut v);
        }

        let est = self.effective_estimator();
        if !(0.0..=1.0).contains(&est.alpha) {
            issues.push("estimator.alpha: must be in [0, 1]".to_string());
        }
        if !(est.period > 0.0) {
            issues.push("estimator.period: must be > 0".to_string());
        }
        if !(0.0..=1.0).contains(&est.initial_fraction) {
            issues.push("estimator.initial_fraction: must be in [0, 1]".to_string());
        }

        match (&self.topology.positions, &self.topology.random) {
            (None, None) => {
                issues.push("topology: needs either positions or random".to_string())
            }
            (Some(_), Some(_)) => {
                issues.push("topology: positions and random are mutually exclusive".to_string())
            }
            (Some(p), None) => {
                let arena = self.effective_arena();
                for (i, &[x, y]) in p.iter().enumerate() {
                    if !x.is_finite() || !y.is_finite() || !arena.contains(Position { x, y }) {
                        issues.push(format!("topology.positions[{i}]: ({x}, {y}) outside arena"));
                    }
                }
            }
            (None, Some(r)) => {
                if r.nodes == 0 {
                    issues.push("topology.random.nodes: must be >= 1".to_string());
                }
            }
        }

        let n = self.node_count();
        for (i, f) in self.flows.iter().enumerate() {
            if f.src >= n {
                issues.push(format!("flows[{i}].src: node {} does not exist", f.src));
            }
            if f.dst >= n {
                issues.push(format!("flows[{i}].dst: node {} does not exist", f.dst));
            }
            if f.src == f.dst {
                issues.push(format!("flows[{i}]: src equals dst"));
            }
            if !(f.rate > 0.0) || !f.rate.is_finite() {
                issues.push(format!("flows[{i}].rate: must be finite and > 0"));
            }
            if f.packet_size == 0 {
                issues.push(format!("flows[{i}].packet_size: must be >= 1 byte"));
            }
            if !(f.start_time >= 0.0) || f.start_time >= self.duration {
                issues.push(format!(
                    "flows[{i}].start_time: must lie in [0, duration)"
                ));
            }
            if let Some(e) = f.end_time {
                if e <= f.start_time {
                    issues.push(format!("flows[{i}].end_time: must exceed start_time"));
                }
            }
        }
        if let Some(g) = self.flow_gen {
            if g.count == 0 {
                issues.push("flow_gen.count: must be >= 1".to_string());
            }
            if n < 2 && g.count > 0 {
                issues.push("flow_gen: needs at least two nodes".to_string());
            }
            if g.rate[0] > g.rate[1] || !(g.rate[0] > 0.0) {
                issues.push("flow_gen.rate: must be a positive [lo, hi] range".to_string());
            }
            if g.packet_size[0] > g.packet_size[1] || g.packet_size[0] == 0 {
                issues.push("flow_gen.packet_size: must be a positive [lo, hi] range".to_string());
            }
            if g.start[0] > g.start[1] || !(g.start[0] >= 0.0) || g.start[1] >= self.duration {
                issues.push("flow_gen.start: must be a [lo, hi] range inside [0, duration)".to_string());
            }
        }

        for (i, p) in self.estimator_preloads().iter().enumerate() {
            if p.0 .0 >= n {
                issues.push(format!("estimator.preload[{i}].node: node {} does not exist", p.0));
            }
            if !(p.1 >= 0.0) || p.1 > radio.channel_capacity {
                issues.push(format!(
                    "estimator.preload[{i}].bandwidth: must be in [0, capacity]"
                ));
            }
        }

        if let Some(m) = self.mobility {
            let lo = m.min_speed.unwrap_or(5.0);
            let hi = m.max_speed.unwrap_or(5.0);
            if !(lo >= 0.0) || hi < lo {
                issues.push("mobility: speeds must satisfy 0 <= min <= max".to_string());
            }
            if let Some(t) = m.tick {
                if !(t > 0.0) {
                    issues.push("mobility.tick: must be > 0".to_string());
                }
            }
        }

        let overload = self.effective_overload_retry();
        if !(overload.threshold > 0.0) || !(overload.cooldown > 0.0) {
            issues.push("protocol.overload_retry: threshold and cooldown must be > 0".to_string());
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    /// Demand bandwidth of every flow under this scenario's MAC profile,
    /// indexed by flow id.
    pub fn flow_bandwidths(&self, flows: &[FlowSpec]) -> Vec<f64> {
        let mac = self.effective_mac();
        flows.iter().map(|f| flow_bandwidth(&mac, f)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "duration": 10.0,
            "topology": { "positions": [[0.0, 0.0], [100.0, 0.0]] },
            "flows": [
                { "src": 0, "dst": 1, "rate": 10.0, "packet_size": 512, "start_time": 1.0 }
            ]
        })
    }

    #[test]
    fn minimal_scenario_loads_with_defaults() {
        let s = Scenario::from_json(&minimal().to_string()).unwrap();
        assert_eq!(s.node_count(), 2);
        let radio = s.effective_radio();
        assert_eq!(radio.tx_range, 250.0);
        assert_eq!(radio.ncs_range, 1100.0);
        let est = s.effective_estimator();
        assert_eq!(est.alpha, 0.5);
        assert_eq!(est.initial_fraction, 1.0);
        assert!(!s.control_airtime_enabled());
        assert!(!s.effective_overload_retry().enabled);
        assert!(s.effective_mobility().is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = minimal();
        v["typo_field"] = serde_json::json!(1);
        assert!(Scenario::from_json(&v.to_string()).is_err());
        let mut v2 = minimal();
        v2["radio"] = serde_json::json!({ "tx_rnage": 250.0 });
        assert!(Scenario::from_json(&v2.to_string()).is_err());
    }

    #[test]
    fn validation_collects_all_issues_at_once() {
        let v = serde_json::json!({
            "duration": -1.0,
            "topology": { "positions": [[0.0, 0.0], [10.0, 0.0]] },
            "flows": [
                { "src": 0, "dst": 0, "rate": -3.0, "packet_size": 0, "start_time": 5.0 }
            ]
        });
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        let Error::Config(issues) = err else { panic!("expected config error") };
        assert!(issues.len() >= 4, "got {issues:?}");
        assert!(issues.iter().any(|i| i.contains("duration")));
        assert!(issues.iter().any(|i| i.contains("src equals dst")));
        assert!(issues.iter().any(|i| i.contains("rate")));
        assert!(issues.iter().any(|i| i.contains("packet_size")));
    }

    #[test]
    fn ncs_defaults_to_twice_cs() {
        let mut v = minimal();
        v["radio"] = serde_json::json!({ "cs_range": 600.0 });
        let s = Scenario::from_json(&v.to_string()).unwrap();
        assert_eq!(s.effective_radio().ncs_range, 1200.0);
    }

    #[test]
    fn mac_capacity_must_agree_with_radio() {
        let mut v = minimal();
        v["radio"] = serde_json::json!({ "channel_capacity": 2.0e6 });
        v["mac"] = serde_json::json!({ "channel_capacity": 1.0e6 });
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        let Error::Config(issues) = err else { panic!("expected config error") };
        assert!(issues.iter().any(|i| i.contains("disagrees")));
    }

    #[test]
    fn round_trip_preserves_the_scenario() {
        let mut v = minimal();
        v["mobility"] = serde_json::json!({ "min_speed": 1.0, "max_speed": 5.0 });
        v["flow_gen"] = serde_json::json!({
            "count": 3, "rate": [10.0, 50.0], "packet_size": [100, 1000], "start": [0.0, 5.0]
        });
        let s = Scenario::from_json(&v.to_string()).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let s2 = Scenario::from_json(&text).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn topology_forms_are_mutually_exclusive() {
        let mut v = minimal();
        v["topology"] = serde_json::json!({
            "positions": [[0.0, 0.0], [1.0, 1.0]],
            "random": { "nodes": 5 }
        });
        assert!(Scenario::from_json(&v.to_string()).is_err());
        let mut v2 = minimal();
        v2["topology"] = serde_json::json!({});
        assert!(Scenario::from_json(&v2.to_string()).is_err());
    }

    #[test]
    fn random_topology_and_flows_are_seed_deterministic() {
        use rand::SeedableRng;
        let v = serde_json::json!({
            "duration": 100.0,
            "topology": { "random": { "nodes": 20 } },
            "flow_gen": {
                "count": 5, "rate": [10.0, 50.0], "packet_size": [100, 1000], "start": [0.0, 50.0]
            }
        });
        let s = Scenario::from_json(&v.to_string()).unwrap();
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let t1 = s.materialize_topology(&mut r1);
        let t2 = s.materialize_topology(&mut r2);
        assert_eq!(t1.positions, t2.positions);
        let f1 = s.materialize_flows(&mut r1);
        let f2 = s.materialize_flows(&mut r2);
        assert_eq!(f1, f2);
        assert_eq!(f1.len(), 5);
        for f in &f1 {
            assert_ne!(f.src, f.dst);
            assert!(f.rate >= 10.0 && f.rate <= 50.0);
        }
    }

    #[test]
    fn generated_flow_ids_continue_after_explicit_ones() {
        use rand::SeedableRng;
        let mut v = minimal();
        v["flow_gen"] = serde_json::json!({
            "count": 2, "rate": [10.0, 20.0], "packet_size": [100, 200], "start": [0.0, 5.0]
        });
        let s = Scenario::from_json(&v.to_string()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let flows = s.materialize_flows(&mut rng);
        let ids: Vec<usize> = flows.iter().map(|f| f.id.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }
}
