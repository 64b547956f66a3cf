//! Run outputs: per-flow outcomes, aggregate totals, sampled series, and
//! the event trace. Everything here serializes with integer bits/second
//! and microsecond fields so equal runs produce byte-equal files.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::protocol::{DecisionStage, RejectReason, Variant};

pub fn to_us(seconds: f64) -> u64 {
    (seconds * 1e6).round().max(0.0) as u64
}

pub fn to_bps(bps: f64) -> i64 {
    bps.round() as i64
}

/// Where a flow ended up once the run finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowStatus {
    /// Never settled (deadline still open when the run ended).
    Pending,
    /// Carrying traffic at the end of the run.
    Admitted,
    /// Admission denied.
    Rejected,
    /// Lost its route (or was evicted) and never recovered.
    Broken,
    /// Reached its scheduled end while admitted.
    Finished,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowReport {
    pub id: usize,
    pub src: usize,
    pub dst: usize,
    /// Application offered rate.
    pub offered_bps: u64,
    /// Channel bandwidth one hop consumes.
    pub demand_bps: u64,
    pub status: FlowStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<RejectReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub admitted_at_us: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hop_count: Option<u32>,
    /// Delivered bits over offered bits across the flow's scheduled
    /// lifetime, parts per million.
    pub delivered_ratio_ppm: u64,
    /// Mean achieved rate while the flow was actually carrying traffic.
    pub mean_rate_bps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_delay_us: Option<u64>,
    /// Route-repair attempts consumed.
    pub retries: u32,
    /// Admitted but either starved itself or starved an earlier flow.
    pub false_admission: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Totals {
    pub flows: u32,
    pub admitted: u32,
    pub rejected: u32,
    pub broken: u32,
    pub finished: u32,
    pub pending: u32,
    pub false_admissions: u32,
    /// Time-mean of the summed offered rate of active admitted flows.
    pub offered_mean_bps: i64,
    /// Time-mean of the summed achieved rate of active admitted flows.
    pub admitted_throughput_bps: i64,
    /// Time-mean of the achieved-minus-offered gap (never positive).
    pub n_f_mean_bps: i64,
    /// Same gap over the final sampling window.
    pub n_f_final_bps: i64,
    /// Activity-weighted mean one-hop delay.
    pub avg_per_hop_delay_us: u64,
    pub control_messages: BTreeMap<String, u64>,
    pub control_total: u64,
}

/// Per-node channel snapshot at one sample instant.
#[derive(Debug, Clone, Serialize)]
pub struct NodeSample {
    pub t_us: u64,
    /// True spare bandwidth at each node, capacity minus sensed load.
    pub available_bps: Vec<i64>,
    /// What each node's own estimator believed at the same instant.
    pub estimate_bps: Vec<i64>,
}

/// Per-flow achieved rate over one sampling window (window end at `t_us`).
#[derive(Debug, Clone, Serialize)]
pub struct FlowWindow {
    pub t_us: u64,
    pub flow: usize,
    pub offered_bps: i64,
    pub achieved_bps: i64,
    pub delay_us: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEvent {
    pub t_us: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<usize>,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TraceKind {
    /// One admission evaluation at one node.
    Decision {
        stage: DecisionStage,
        count: u32,
        consumed_bps: i64,
        available_bps: i64,
        admitted: bool,
    },
    /// One control-plane transmission (`to` absent for broadcasts).
    Send {
        msg: &'static str,
        #[serde(skip_serializing_if = "Option::is_none")]
        to: Option<usize>,
    },
    /// A flow's fate was decided (possibly again, after repair).
    Settled {
        status: FlowStatus,
        #[serde(skip_serializing_if = "Option::is_none")]
        reason: Option<RejectReason>,
    },
    /// A route leg stopped decoding; `node` is the detecting transmitter.
    LinkBreak { downstream: usize },
    /// The source is about to rerun discovery.
    Retry { attempt: u32 },
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub variant: Variant,
    pub seed: u64,
    pub duration_us: u64,
    pub node_count: usize,
    pub sample_interval_us: u64,
    pub totals: Totals,
    pub flows: Vec<FlowReport>,
    pub node_series: Vec<NodeSample>,
    pub flow_series: Vec<FlowWindow>,
    /// Written separately as line-delimited JSON, not part of the summary.
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

impl MetricsReport {
    /// Summary document, stable field order.
    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One line of JSON per trace event.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.trace {
            out.push_str(&serde_json::to_string(ev).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }

    /// Flow series as CSV, one row per flow per sampling window.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("t_us,flow,offered_bps,achieved_bps,delay_us\n");
        for w in &self.flow_series {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                w.t_us, w.flow, w.offered_bps, w.achieved_bps, w.delay_us
            ));
        }
        out
    }
}
