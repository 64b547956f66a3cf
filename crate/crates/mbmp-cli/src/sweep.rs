//! Multi-point comparison sweeps: one scenario template swept over node
//! counts, replicated, and run under each requested variant. Rows come
//! out in spec order (variant, then node count, then replicate) no
//! matter how the parallel runs finish.

use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use mbmp_core::{Scenario, Variant};

pub const CSV_HEADER: &str = "variant,node_count,replicate,seed,status,n_f_bps,total_throughput_bps,control_messages,avg_per_hop_delay_us";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub name: Option<String>,
    /// Replicate k runs with seed base_seed + k.
    #[serde(default)]
    pub base_seed: Option<u64>,
    pub node_counts: Vec<usize>,
    pub replicates: u32,
    pub variants: Vec<String>,
    /// Scenario template; its topology must be `random` so the node
    /// count can be swept.
    pub scenario: serde_json::Value,
}

impl SweepSpec {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        if !path.exists() {
            return Err(format!("sweep spec not found: {}", path.display()));
        }
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn from_str(text: &str) -> Result<Self, String> {
        let spec: SweepSpec = serde_json::from_str(text).map_err(|e| e.to_string())?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn variants(&self) -> Vec<Variant> {
        self.variants.iter().map(|v| Variant::from_str(v).expect("validated")).collect()
    }

    fn validate(&self) -> Result<(), String> {
        let mut issues = Vec::new();
        if self.node_counts.is_empty() {
            issues.push("node_counts: at least one sweep point required".to_string());
        }
        if self.replicates == 0 {
            issues.push("replicates: at least one replicate required".to_string());
        }
        if self.variants.is_empty() {
            issues.push("variants: at least one variant required".to_string());
        }
        for v in &self.variants {
            if let Err(e) = Variant::from_str(v) {
                issues.push(e.to_string());
            }
        }
        if self.scenario.pointer("/topology/random").is_none() {
            issues.push(
                "scenario: template topology must be `random` so node count can be swept"
                    .to_string(),
            );
        }
        // The template must be a working scenario at every point, not
        // just structurally; instantiate each one once up front.
        if issues.is_empty() {
            for &nodes in &self.node_counts {
                if nodes == 0 {
                    issues.push("node_counts: zero-node point".to_string());
                    continue;
                }
                if let Err(e) = self.instantiate(nodes) {
                    issues.push(format!("scenario at {nodes} nodes: {e}"));
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues.join("\n"))
        }
    }

    pub fn instantiate(&self, nodes: usize) -> Result<Scenario, String> {
        let mut value = self.scenario.clone();
        match value.pointer_mut("/topology/random/nodes") {
            Some(slot) => *slot = serde_json::json!(nodes),
            None => return Err("template topology.random has no nodes field".to_string()),
        }
        Scenario::from_json(&value.to_string()).map_err(|e| e.to_string())
    }
}

struct Row {
    variant: Variant,
    node_count: usize,
    replicate: u32,
    seed: u64,
    outcome: Option<Outcome>,
}

struct Outcome {
    n_f_bps: i64,
    total_throughput_bps: i64,
    control_messages: u64,
    avg_per_hop_delay_us: u64,
}

pub fn run_sweep(spec: &SweepSpec) -> Result<String, String> {
    let base_seed = spec.base_seed.unwrap_or(1);
    let variants = spec.variants();

    let mut plan = Vec::new();
    for &variant in &variants {
        for &node_count in &spec.node_counts {
            for replicate in 0..spec.replicates {
                plan.push((variant, node_count, replicate, base_seed + replicate as u64));
            }
        }
    }

    let pool = thread_pool()?;
    let rows: Vec<Row> = pool.install(|| {
        use rayon::prelude::*;
        plan.par_iter()
            .map(|&(variant, node_count, replicate, seed)| {
                let outcome = run_one(spec, variant, node_count, seed);
                Row { variant, node_count, replicate, seed, outcome }
            })
            .collect()
    });

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for row in rows {
        let head = format!(
            "{},{},{},{}",
            row.variant.name(),
            row.node_count,
            row.replicate,
            row.seed
        );
        match row.outcome {
            Some(o) => csv.push_str(&format!(
                "{head},ok,{},{},{},{}\n",
                o.n_f_bps, o.total_throughput_bps, o.control_messages, o.avg_per_hop_delay_us
            )),
            None => csv.push_str(&format!("{head},failed,,,,\n")),
        }
    }
    Ok(csv)
}

fn run_one(spec: &SweepSpec, variant: Variant, node_count: usize, seed: u64) -> Option<Outcome> {
    let scenario = spec.instantiate(node_count).ok()?;
    let report = std::panic::catch_unwind(AssertUnwindSafe(|| {
        mbmp_core::run(&scenario, variant, seed)
    }))
    .ok()?
    .ok()?;
    Some(Outcome {
        n_f_bps: report.totals.n_f_mean_bps,
        total_throughput_bps: report.totals.admitted_throughput_bps,
        control_messages: report.totals.control_total,
        avg_per_hop_delay_us: report.totals.avg_per_hop_delay_us,
    })
}

fn thread_pool() -> Result<rayon::ThreadPool, String> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("MBMP_SIM_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| format!("MBMP_SIM_THREADS {raw:?} is not a thread count"))?;
        if n == 0 {
            return Err("MBMP_SIM_THREADS must be at least 1".to_string());
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| e.to_string())
}
