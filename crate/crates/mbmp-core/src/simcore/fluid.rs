//! Steady-state throughput shares for the currently admitted flows.
//!
//! Between events the simulator treats traffic as fluid: each flow f gets
//! a share `phi_f` of its offered rate, where `phi_f` is limited by the
//! busiest channel locus among f's own transmitters. The shares and the
//! per-node sensed loads they imply are the coupled unknowns, solved by
//! damped fixed-point iteration.

use crate::bandwidth::FlowId;
use crate::geometry::{NodeId, Topology};

/// One admitted flow as the solver sees it.
#[derive(Debug, Clone)]
pub struct FlowLoad {
    pub flow: FlowId,
    /// Full route, destination included.
    pub route: Vec<NodeId>,
    /// Per-hop consumed bandwidth, bits/second.
    pub w: f64,
    /// Per-packet channel time, seconds, for the delay model.
    pub airtime: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FluidSolution {
    /// On-air fraction of offered rate, parallel to the solver input.
    pub phi: Vec<f64>,
    /// Goodput fraction of offered rate. An overloaded locus keeps the
    /// channel fully busy, but collisions and queue overflow claim
    /// airtime in proportion to the overload, so the goodput crossing it
    /// is `capacity / u`, not capacity. A flow holds its on-air share of
    /// that shrinking pool, and the toll repeats at every congested hop
    /// of its route: `phi * prod(1 / u_tx^2)` over transmitters past
    /// saturation. Losses compound; a long route through trouble pays
    /// dearly, which is exactly what uncontrolled admission looks like.
    pub delivered: Vec<f64>,
    /// Load sensed within `cs_range` of each node, bits/second.
    pub sensed: Vec<f64>,
    /// Load within `ncs_range` of each node, bits/second.
    pub neigh_sensed: Vec<f64>,
    /// End-to-end queueing-inflated delay per flow, seconds.
    pub flow_delay: Vec<f64>,
    pub hop_counts: Vec<u32>,
}

const MAX_SWEEPS: usize = 200;
const TOL: f64 = 1e-10;
/// Utilization is capped just below saturation so delays stay finite.
const U_CAP: f64 = 0.99;

/// Solves for the achieved share of every flow plus the sensed-load maps
/// the shares imply.
///
/// A flow's share is `min(1, 1/u)` at the most loaded of its own
/// transmitters' loci, with `u` that locus's sensed load over capacity.
/// Per-hop delay uses the harsher view of the most congested node that
/// senses the transmitter, M/M/1 style: `airtime / (1 - u)`.
pub fn solve(topo: &Topology, flows: &[FlowLoad]) -> FluidSolution {
    let n = topo.len();
    let capacity = topo.radio.channel_capacity;
    let mut out = FluidSolution {
        phi: vec![1.0; flows.len()],
        delivered: vec![1.0; flows.len()],
        sensed: vec![0.0; n],
        neigh_sensed: vec![0.0; n],
        flow_delay: vec![0.0; flows.len()],
        hop_counts: flows.iter().map(|f| (f.route.len() - 1) as u32).collect(),
    };
    if flows.is_empty() {
        return out;
    }

    // Transmitters are every route node but the destination. For each we
    // precompute who senses it, so iteration sweeps touch no geometry.
    struct Hop {
        flow_idx: usize,
        tx: usize,
        cs_listeners: Vec<usize>,
        ncs_listeners: Vec<usize>,
    }
    let mut hops = Vec::new();
    for (fi, f) in flows.iter().enumerate() {
        for &tx in &f.route[..f.route.len() - 1] {
            let p = topo.positions[tx.0];
            let mut cs = Vec::new();
            let mut ncs = Vec::new();
            for (q, qp) in topo.positions.iter().enumerate() {
                let d = p.distance(*qp);
                if d <= topo.radio.cs_range {
                    cs.push(q);
                }
                if d <= topo.radio.ncs_range {
                    ncs.push(q);
                }
            }
            hops.push(Hop { flow_idx: fi, tx: tx.0, cs_listeners: cs, ncs_listeners: ncs });
        }
    }

    let mut sensed = vec![0.0f64; n];
    for _ in 0..MAX_SWEEPS {
        sensed.iter_mut().for_each(|s| *s = 0.0);
        for h in &hops {
            let load = out.phi[h.flow_idx] * flows[h.flow_idx].w;
            for &q in &h.cs_listeners {
                sensed[q] += load;
            }
        }
        let mut worst_u = vec![0.0f64; flows.len()];
        for h in &hops {
            let u = sensed[h.tx] / capacity;
            if u > worst_u[h.flow_idx] {
                worst_u[h.flow_idx] = u;
            }
        }
        let mut delta = 0.0f64;
        for (fi, phi) in out.phi.iter_mut().enumerate() {
            let target = if worst_u[fi] > 1.0 { 1.0 / worst_u[fi] } else { 1.0 };
            // Half-step damping: the map is not a contraction near
            // saturation and undamped sweeps can cycle.
            let next = 0.5 * *phi + 0.5 * target;
            delta = delta.max((next - *phi).abs());
            *phi = next;
        }
        if delta < TOL {
            break;
        }
    }

    out.sensed.iter_mut().for_each(|s| *s = 0.0);
    for h in &hops {
        let load = out.phi[h.flow_idx] * flows[h.flow_idx].w;
        for &q in &h.cs_listeners {
            out.sensed[q] += load;
        }
        for &q in &h.ncs_listeners {
            out.neigh_sensed[q] += load;
        }
    }
    for (fi, d) in out.delivered.iter_mut().enumerate() {
        *d = out.phi[fi];
    }
    for h in &hops {
        let u = out.sensed[h.tx] / capacity;
        if u > 1.0 {
            out.delivered[h.flow_idx] /= u * u;
        }
        let worst = h
            .cs_listeners
            .iter()
            .map(|&q| out.sensed[q] / capacity)
            .fold(0.0f64, f64::max)
            .min(U_CAP);
        out.flow_delay[h.flow_idx] += flows[h.flow_idx].airtime / (1.0 - worst);
    }
    out
}
