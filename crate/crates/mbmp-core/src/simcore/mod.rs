//! Discrete-event simulation engine.
//!
//! Nodes run the admission protocol as pure state machines; this module
//! supplies everything around them: the event queue, control-message
//! delivery with per-hop latency, fluid-model data traffic between
//! events, channel estimators fed from sensed busy time, random-waypoint
//! mobility with route-break repair, and metrics collection. Runs are
//! fully determined by (scenario, variant, seed).

pub mod fluid;
pub mod metrics;

pub use metrics::MetricsReport;

use std::cmp::Ordering;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bandwidth::{flow_bandwidth, packet_airtime, BandwidthEstimator, FlowId, FlowSpec};
use crate::error::Result;
use crate::geometry::{NodeId, RandomWaypoint, Topology};
use crate::protocol::{
    Action, ControlMessage, Ctx, MessageKind, Node, ProtocolConfig, RejectReason, TimerKind,
    Variant,
};
use crate::scenario::{CNeighborConfig, OverloadRetryConfig, Scenario};
use fluid::{FlowLoad, FluidSolution};
use metrics::{
    to_bps, to_us, FlowReport, FlowStatus, FlowWindow, NodeSample, Totals, TraceEvent, TraceKind,
};

/// Runs one scenario under one protocol variant. Equal inputs produce
/// identical reports, byte for byte once serialized.
pub fn run(scenario: &Scenario, variant: Variant, seed: u64) -> Result<MetricsReport> {
    Engine::new(scenario, variant, seed)?.run_to_end()
}

#[derive(Debug, Clone)]
enum EventKind {
    FlowStart(usize),
    FlowEnd(usize),
    Deliver { from: NodeId, to: NodeId, msg: ControlMessage },
    Timer { node: NodeId, flow: FlowId, kind: TimerKind },
    MobilityTick(u64),
    SampleTick(u64),
    HelloTick(u64),
}

#[derive(Debug, Clone)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

// Heap order: earliest time first, ties broken by insertion order. The
// sequence number makes the order total, so runs cannot diverge on ties.
impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone)]
struct ActiveFlow {
    route: Vec<NodeId>,
}

enum SendTarget {
    Broadcast,
    WideBroadcast,
    Unicast(NodeId),
    WideUnicast(NodeId),
}

struct Engine {
    // Fixed configuration.
    variant: Variant,
    seed: u64,
    name: Option<String>,
    duration: f64,
    sample_interval: f64,
    control_latency: f64,
    control_airtime: bool,
    proto_cfg: ProtocolConfig,
    cneigh: CNeighborConfig,
    overload: OverloadRetryConfig,
    capacity: f64,
    flows: Vec<FlowSpec>,
    w: Vec<f64>,
    offered: Vec<f64>,
    airtime: Vec<f64>,

    // Mutable world.
    topo: Topology,
    nodes: Vec<Node>,
    local_est: Vec<BandwidthEstimator>,
    neigh_est: Vec<BandwidthEstimator>,
    waypoint: Option<RandomWaypoint>,
    mobility_tick: f64,
    mob_rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    now: f64,
    active: BTreeMap<usize, ActiveFlow>,
    fluid: FluidSolution,
    engine_msg_seq: u64,

    // Per-flow lifecycle.
    status: Vec<FlowStatus>,
    reject_reason: Vec<Option<RejectReason>>,
    was_admitted: Vec<bool>,
    admitted_at: Vec<Option<f64>>,
    hops_admitted: Vec<Option<u32>>,
    break_retries: Vec<u32>,
    overload_attempts: Vec<u32>,
    last_retry_at: Vec<f64>,
    false_adm: Vec<bool>,

    // Accumulators (time integrals since t = 0).
    delivered_bits: Vec<f64>,
    active_seconds: Vec<f64>,
    delay_integral: Vec<f64>,
    hop_delay_integral: f64,
    hop_seconds: f64,
    nf_integral: f64,
    thr_integral: f64,
    offered_integral: f64,
    ctrl_seconds: Vec<f64>,
    ctrl_rate: Vec<f64>,

    // Sampled outputs.
    window_bits: Vec<f64>,
    nf_integral_at_sample: f64,
    last_sample_time: f64,
    nf_final: f64,
    counts: BTreeMap<&'static str, u64>,
    trace: Vec<TraceEvent>,
    node_series: Vec<NodeSample>,
    flow_series: Vec<FlowWindow>,
}

impl Engine {
    fn new(scenario: &Scenario, variant: Variant, seed: u64) -> Result<Engine> {
        scenario.validate()?;

        // Independent RNG streams keep topology, traffic, and motion
        // draws from perturbing each other when one of them changes.
        let mut topo_rng = ChaCha8Rng::seed_from_u64(seed);
        topo_rng.set_stream(0);
        let mut flow_rng = ChaCha8Rng::seed_from_u64(seed);
        flow_rng.set_stream(1);
        let mut mob_rng = ChaCha8Rng::seed_from_u64(seed);
        mob_rng.set_stream(2);

        let mut topo = scenario.materialize_topology(&mut topo_rng);
        let flows = scenario.materialize_flows(&mut flow_rng);
        let mac = scenario.effective_mac();
        let est_cfg = scenario.effective_estimator();
        let cneigh = scenario.effective_cneighbor();
        let proto_cfg = scenario.effective_protocol();
        let n = topo.len();
        let capacity = topo.radio.channel_capacity;

        let w: Vec<f64> = flows.iter().map(|f| flow_bandwidth(&mac, f)).collect();
        let offered: Vec<f64> = flows.iter().map(|f| f.offered_rate_bps()).collect();
        let airtime: Vec<f64> = flows.iter().map(|f| packet_airtime(&mac, f.packet_size)).collect();

        let mut nodes: Vec<Node> = (0..n).map(|i| Node::new(NodeId(i), cneigh.hop_limit)).collect();
        for f in &flows {
            nodes[f.dst.0].register_destination(f.id);
        }

        let initial = est_cfg.initial_fraction * capacity;
        let mut local_est: Vec<BandwidthEstimator> = (0..n)
            .map(|_| BandwidthEstimator::new(est_cfg.alpha, est_cfg.period, capacity, initial))
            .collect();
        let mut neigh_est = local_est.clone();
        for (node, bw) in scenario.estimator_preloads() {
            local_est[node.0].preload(bw);
            neigh_est[node.0].preload(bw);
        }

        let mobility = scenario.effective_mobility();
        let waypoint = mobility.map(|m| RandomWaypoint::new(&topo, m.config, &mut mob_rng));
        let _ = &mut topo;

        let nf = flows.len();
        let mut engine = Engine {
            variant,
            seed,
            name: scenario.name.clone(),
            duration: scenario.duration,
            sample_interval: scenario.effective_sample_interval(),
            control_latency: scenario.control_latency(),
            control_airtime: scenario.control_airtime_enabled(),
            proto_cfg,
            cneigh,
            overload: scenario.effective_overload_retry(),
            capacity,
            flows,
            w,
            offered,
            airtime,
            topo,
            nodes,
            local_est,
            neigh_est,
            waypoint,
            mobility_tick: mobility.map(|m| m.tick).unwrap_or(0.1),
            mob_rng,
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: 0.0,
            active: BTreeMap::new(),
            fluid: FluidSolution::default(),
            engine_msg_seq: 0,
            status: vec![FlowStatus::Pending; nf],
            reject_reason: vec![None; nf],
            was_admitted: vec![false; nf],
            admitted_at: vec![None; nf],
            hops_admitted: vec![None; nf],
            break_retries: vec![0; nf],
            overload_attempts: vec![0; nf],
            last_retry_at: vec![f64::NEG_INFINITY; nf],
            false_adm: vec![false; nf],
            delivered_bits: vec![0.0; nf],
            active_seconds: vec![0.0; nf],
            delay_integral: vec![0.0; nf],
            hop_delay_integral: 0.0,
            hop_seconds: 0.0,
            nf_integral: 0.0,
            thr_integral: 0.0,
            offered_integral: 0.0,
            ctrl_seconds: vec![0.0; n],
            ctrl_rate: vec![0.0; n],
            window_bits: vec![0.0; nf],
            nf_integral_at_sample: 0.0,
            last_sample_time: 0.0,
            nf_final: 0.0,
            counts: BTreeMap::new(),
            trace: Vec::new(),
            node_series: Vec::new(),
            flow_series: Vec::new(),
        };
        engine.recompute_fluid();

        // The t = 0 sample must observe the world before anything else
        // happens at t = 0, so it is seeded first.
        engine.push(0.0, EventKind::SampleTick(0));
        if engine.waypoint.is_some() {
            let tick = engine.mobility_tick;
            engine.push(tick, EventKind::MobilityTick(1));
        }
        if let Some(interval) = engine.proto_cfg.hello_interval {
            engine.push(interval, EventKind::HelloTick(1));
        }
        for (i, f) in engine.flows.iter().enumerate() {
            engine.queue.push(Reverse(Event {
                time: f.start_time,
                seq: engine.next_seq,
                kind: EventKind::FlowStart(i),
            }));
            engine.next_seq += 1;
        }
        let ends: Vec<(f64, usize)> = engine
            .flows
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.end_time.filter(|&e| e <= engine.duration).map(|e| (e, i)))
            .collect();
        for (e, i) in ends {
            engine.push(e, EventKind::FlowEnd(i));
        }
        Ok(engine)
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.queue.push(Reverse(Event { time, seq: self.next_seq, kind }));
        self.next_seq += 1;
    }

    fn run_to_end(mut self) -> Result<MetricsReport> {
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > self.duration {
                break;
            }
            self.advance_to(ev.time)?;
            self.dispatch(ev)?;
        }
        self.advance_to(self.duration)?;
        Ok(self.finalize())
    }

    /// Moves simulated time forward: data traffic flows at the current
    /// fluid shares, integrals accumulate, and every estimator observes
    /// its locus's busy time.
    fn advance_to(&mut self, t: f64) -> Result<()> {
        let dt = t - self.now;
        if dt <= 0.0 {
            return Ok(());
        }
        debug_assert_eq!(self.fluid.phi.len(), self.active.len());
        let mut nf = 0.0;
        let mut thr = 0.0;
        let mut off = 0.0;
        for (k, (&fi, _)) in self.active.iter().enumerate() {
            let goodput = self.fluid.delivered[k];
            let offered = self.offered[fi];
            self.delivered_bits[fi] += goodput * offered * dt;
            self.active_seconds[fi] += dt;
            self.delay_integral[fi] += self.fluid.flow_delay[k] * dt;
            self.hop_delay_integral += self.fluid.flow_delay[k] * dt;
            self.hop_seconds += f64::from(self.fluid.hop_counts[k]) * dt;
            nf += (goodput - 1.0) * offered;
            thr += goodput * offered;
            off += offered;
        }
        self.nf_integral += nf * dt;
        self.thr_integral += thr * dt;
        self.offered_integral += off * dt;

        let iv = (self.now, t);
        for i in 0..self.topo.len() {
            let u_local = (self.fluid.sensed[i] / self.capacity + self.ctrl_rate[i]).min(1.0);
            let u_neigh = (self.fluid.neigh_sensed[i] / self.capacity + self.ctrl_rate[i]).min(1.0);
            for (est, u) in [(&mut self.local_est[i], u_local), (&mut self.neigh_est[i], u_neigh)] {
                let busy = u * dt;
                if busy > 0.0 {
                    est.observe_channel(iv, &[(iv.0, iv.0 + busy)])?;
                } else {
                    est.observe_channel(iv, &[])?;
                }
            }
        }
        self.now = t;
        Ok(())
    }

    fn dispatch(&mut self, ev: Event) -> Result<()> {
        match ev.kind {
            EventKind::FlowStart(fi) => self.on_flow_start(fi),
            EventKind::FlowEnd(fi) => self.on_flow_end(fi),
            EventKind::Deliver { from, to, msg } => {
                let acts = self.act_on(to.0, |node, ctx| node.handle(ctx, from, &msg));
                self.process_actions(to.0, acts)
            }
            EventKind::Timer { node, flow, kind } => {
                let acts = self.act_on(node.0, |n, ctx| n.on_timer(ctx, flow, kind));
                self.process_actions(node.0, acts)
            }
            EventKind::MobilityTick(k) => self.on_mobility(k),
            EventKind::SampleTick(k) => self.on_sample(k),
            EventKind::HelloTick(k) => self.on_hello(k),
        }
    }

    fn act_on<F>(&mut self, i: usize, f: F) -> Vec<Action>
    where
        F: FnOnce(&mut Node, &Ctx) -> Vec<Action>,
    {
        let cfg = self.proto_cfg;
        let ctx = Ctx {
            now: self.now,
            variant: self.variant,
            config: &cfg,
            local_estimate: self.local_est[i].estimate(),
            neigh_estimate: self.neigh_est[i].estimate(),
        };
        f(&mut self.nodes[i], &ctx)
    }

    fn process_actions(&mut self, node: usize, actions: Vec<Action>) -> Result<()> {
        for a in actions {
            match a {
                Action::Broadcast(msg) => self.send(node, msg, SendTarget::Broadcast)?,
                Action::WideBroadcast(msg) => self.send(node, msg, SendTarget::WideBroadcast)?,
                Action::Unicast { to, msg } => self.send(node, msg, SendTarget::Unicast(to))?,
                Action::WideUnicast { to, msg } => {
                    self.send(node, msg, SendTarget::WideUnicast(to))?
                }
                Action::SetTimer { flow, kind, at } => {
                    self.push(at, EventKind::Timer { node: NodeId(node), flow, kind });
                }
                Action::Admitted { flow, route } => self.on_admitted(flow.0, route),
                Action::Rejected { flow, reason } => self.on_rejected(flow.0, reason),
                Action::RouteBroken { flow } => self.on_route_broken(flow.0),
                Action::Released { .. } => {}
                Action::Decision(d) => self.trace.push(TraceEvent {
                    t_us: to_us(self.now),
                    node: Some(d.node.0),
                    flow: Some(d.flow.0),
                    kind: TraceKind::Decision {
                        stage: d.stage,
                        count: d.count,
                        consumed_bps: to_bps(d.consumed),
                        available_bps: to_bps(d.available),
                        admitted: d.admitted,
                    },
                }),
            }
        }
        Ok(())
    }

    /// Transmits one control message: counts it, optionally charges its
    /// airtime to every listener's locus, and schedules deliveries one
    /// latency later (ascending recipient id).
    fn send(&mut self, from: usize, msg: ControlMessage, target: SendTarget) -> Result<()> {
        *self.counts.entry(msg.kind.label()).or_insert(0) += 1;
        let flow = (msg.flow.0 != usize::MAX).then_some(msg.flow.0);
        let to_field = match &target {
            SendTarget::Unicast(to) | SendTarget::WideUnicast(to) => Some(to.0),
            _ => None,
        };
        self.trace.push(TraceEvent {
            t_us: to_us(self.now),
            node: Some(from),
            flow,
            kind: TraceKind::Send { msg: msg.kind.label(), to: to_field },
        });
        if self.control_airtime {
            let seconds = msg.wire_bits() as f64 / self.capacity;
            self.ctrl_seconds[from] += seconds;
            for q in self.topo.cneighbors(NodeId(from))? {
                self.ctrl_seconds[q.0] += seconds;
            }
        }

        let deliver_at = self.now + self.control_latency;
        match target {
            SendTarget::Broadcast => {
                for to in self.topo.tx_neighbors(NodeId(from))? {
                    self.push(
                        deliver_at,
                        EventKind::Deliver { from: NodeId(from), to, msg: msg.clone() },
                    );
                }
            }
            SendTarget::WideBroadcast => {
                for to in self.topo.cneighbors(NodeId(from))? {
                    self.push(
                        deliver_at,
                        EventKind::Deliver { from: NodeId(from), to, msg: msg.clone() },
                    );
                }
            }
            SendTarget::Unicast(to) | SendTarget::WideUnicast(to) => {
                // Route errors always reach the upstream node: by the
                // time a break is noticed the prefix legs were intact,
                // and dropping them would strand reservations forever.
                let range = match target {
                    SendTarget::WideUnicast(_) => self.topo.radio.cs_range,
                    _ => self.topo.radio.tx_range,
                };
                let reachable = matches!(msg.kind, MessageKind::RouteError { .. })
                    || self.topo.distance(NodeId(from), to)? <= range;
                if reachable {
                    self.push(deliver_at, EventKind::Deliver { from: NodeId(from), to, msg });
                }
            }
        }
        Ok(())
    }

    fn on_flow_start(&mut self, fi: usize) -> Result<()> {
        if self.status[fi] != FlowStatus::Pending && !self.active.contains_key(&fi) {
            return Ok(());
        }
        let src = self.flows[fi].src.0;
        let (flow, w) = (self.flows[fi].id, self.w[fi]);
        let acts = self.act_on(src, |n, ctx| n.start_flow(ctx, flow, w));
        self.process_actions(src, acts)
    }

    fn on_flow_end(&mut self, fi: usize) -> Result<()> {
        if self.active.contains_key(&fi) {
            self.teardown(fi);
            self.status[fi] = FlowStatus::Finished;
            self.trace.push(TraceEvent {
                t_us: to_us(self.now),
                node: Some(self.flows[fi].src.0),
                flow: Some(fi),
                kind: TraceKind::Settled { status: FlowStatus::Finished, reason: None },
            });
        }
        Ok(())
    }

    /// Stops a flow's traffic and frees its reservations; the teardown
    /// notice reaches everyone who overheard the confirmation.
    fn teardown(&mut self, fi: usize) {
        if let Some(_af) = self.active.remove(&fi) {
            if self.variant.admission_controlled() {
                for node in &mut self.nodes {
                    node.release(self.flows[fi].id);
                }
            }
            self.recompute_fluid();
        }
    }

    fn on_admitted(&mut self, fi: usize, route: Vec<NodeId>) {
        self.hops_admitted[fi] = Some((route.len() - 1) as u32);
        if self.admitted_at[fi].is_none() {
            self.admitted_at[fi] = Some(self.now);
        }
        self.was_admitted[fi] = true;
        self.last_retry_at[fi] = self.now;
        if self.variant.admission_controlled() {
            // Everyone still holding the request's soft state overhears
            // the confirmation; it rides the same broadcast medium the
            // request flooded. The hold keeps counting until the
            // estimators have had four full periods to absorb the new
            // traffic (a half-life smoother is ~94% caught up by then);
            // shorter windows let borderline admissions slip through the
            // gap between soft-state expiry and a converged estimate.
            //
            // The request reserved one hop's worth everywhere, but the
            // chosen route decides what each holder will really hear:
            // one hop's cost per route transmitter in carrier-sense
            // range, and nothing at all out of earshot.
            let visible_after = self.now + 4.0 * self.local_est[0].period;
            let (id, w) = (self.flows[fi].id, self.w[fi]);
            let txs = &route[..route.len() - 1];
            for ni in 0..self.nodes.len() {
                let sensed = txs
                    .iter()
                    .filter(|t| {
                        self.topo.positions[ni].distance(self.topo.positions[t.0])
                            <= self.topo.radio.cs_range
                    })
                    .count();
                if sensed == 0 {
                    self.nodes[ni].release(id);
                } else {
                    self.nodes[ni].confirm(id, w * sensed as f64, visible_after);
                }
            }
        }
        self.trace.push(TraceEvent {
            t_us: to_us(self.now),
            node: Some(self.flows[fi].src.0),
            flow: Some(fi),
            kind: TraceKind::Settled { status: FlowStatus::Admitted, reason: None },
        });

        if self.active.contains_key(&fi) {
            // A no-admission source re-flooded while still carrying
            // traffic; it just switches routes.
            self.active.get_mut(&fi).unwrap().route = route;
            self.recompute_fluid();
            return;
        }

        // Admitting may degrade flows that were already fine; that makes
        // THIS admission the false one.
        let before: BTreeMap<usize, f64> = self
            .active
            .keys()
            .copied()
            .zip(self.fluid.delivered.iter().copied())
            .collect();
        self.status[fi] = FlowStatus::Admitted;
        self.active.insert(fi, ActiveFlow { route });
        self.recompute_fluid();
        for (k, (&g, _)) in self.active.iter().enumerate() {
            if g == fi {
                continue;
            }
            if let Some(&old) = before.get(&g) {
                if old >= 0.95 && self.fluid.delivered[k] < 0.95 {
                    self.false_adm[fi] = true;
                }
            }
        }
    }

    fn on_rejected(&mut self, fi: usize, reason: RejectReason) {
        if self.active.contains_key(&fi) {
            // A re-flood under the no-admission baseline came up empty;
            // the flow keeps its current route.
            return;
        }
        let status =
            if self.was_admitted[fi] { FlowStatus::Broken } else { FlowStatus::Rejected };
        self.status[fi] = status;
        self.reject_reason[fi] = Some(reason);
        self.trace.push(TraceEvent {
            t_us: to_us(self.now),
            node: Some(self.flows[fi].src.0),
            flow: Some(fi),
            kind: TraceKind::Settled { status, reason: Some(reason) },
        });
    }

    fn on_route_broken(&mut self, fi: usize) {
        let over = self.flows[fi].end_time.map(|e| self.now >= e).unwrap_or(false);
        if !over && self.break_retries[fi] < self.proto_cfg.retry_budget {
            self.break_retries[fi] += 1;
            self.status[fi] = FlowStatus::Pending;
            self.trace.push(TraceEvent {
                t_us: to_us(self.now),
                node: Some(self.flows[fi].src.0),
                flow: Some(fi),
                kind: TraceKind::Retry {
                    attempt: self.break_retries[fi] + self.overload_attempts[fi],
                },
            });
            self.push(self.now, EventKind::FlowStart(fi));
        } else {
            self.status[fi] = FlowStatus::Broken;
            self.trace.push(TraceEvent {
                t_us: to_us(self.now),
                node: Some(self.flows[fi].src.0),
                flow: Some(fi),
                kind: TraceKind::Settled { status: FlowStatus::Broken, reason: None },
            });
        }
    }

    fn on_mobility(&mut self, k: u64) -> Result<()> {
        if let Some(wp) = &mut self.waypoint {
            wp.step(&mut self.topo, self.mobility_tick, &mut self.mob_rng);
        }
        self.recompute_fluid();

        // A break is the first no-longer-decoding leg of an active route.
        let mut broken: Vec<(usize, usize)> = Vec::new();
        for (&fi, af) in &self.active {
            for leg in 0..af.route.len() - 1 {
                if self.topo.distance(af.route[leg], af.route[leg + 1])? > self.topo.radio.tx_range
                {
                    broken.push((fi, leg));
                    break;
                }
            }
        }
        for (fi, leg) in broken {
            let af = self.active.remove(&fi).expect("break on active flow");
            let detector = af.route[leg];
            self.trace.push(TraceEvent {
                t_us: to_us(self.now),
                node: Some(detector.0),
                flow: Some(fi),
                kind: TraceKind::LinkBreak { downstream: af.route[leg + 1].0 },
            });
            // Traffic stops instantly; every holder lets go of its
            // reservation. The error report still travels hop by hop so
            // the source learns of the break with realistic delay.
            if self.variant.admission_controlled() {
                for node in &mut self.nodes {
                    node.release(self.flows[fi].id);
                }
            }
            self.engine_msg_seq += 1;
            let err = ControlMessage {
                kind: MessageKind::RouteError {
                    route: af.route.clone(),
                    broken_at: detector,
                },
                flow: self.flows[fi].id,
                w: self.w[fi],
                origin: detector,
                generation: 0,
                msg_id: (u64::from(u32::MAX) << 32) | self.engine_msg_seq,
                hops_traveled: 1,
                sender_hops: 1,
                budget: 0,
            };
            if leg == 0 {
                // The source itself saw the break.
                let acts = self.act_on(detector.0, |n, ctx| n.handle(ctx, detector, &err));
                self.process_actions(detector.0, acts)?;
            } else {
                self.send(detector.0, err, SendTarget::Unicast(af.route[leg - 1]))?;
            }
        }
        self.recompute_fluid();

        let next = (k + 1) as f64 * self.mobility_tick;
        if next <= self.duration {
            self.push(next, EventKind::MobilityTick(k + 1));
        }
        Ok(())
    }

    fn on_sample(&mut self, k: u64) -> Result<()> {
        for node in &mut self.nodes {
            node.tick(self.now, self.cneigh.entry_ttl);
        }

        // Control airtime observed over the window that just closed
        // becomes the busy-fraction surcharge for the next one.
        let span = self.now - self.last_sample_time;
        for i in 0..self.ctrl_rate.len() {
            self.ctrl_rate[i] =
                if span > 0.0 { (self.ctrl_seconds[i] / span).min(1.0) } else { 0.0 };
            self.ctrl_seconds[i] = 0.0;
        }

        let available_bps: Vec<i64> = (0..self.topo.len())
            .map(|i| {
                let used = self.fluid.sensed[i] + self.ctrl_rate[i] * self.capacity;
                to_bps((self.capacity - used).clamp(0.0, self.capacity))
            })
            .collect();
        let estimate_bps: Vec<i64> =
            self.local_est.iter().map(|e| to_bps(e.estimate())).collect();
        self.node_series.push(NodeSample { t_us: to_us(self.now), available_bps, estimate_bps });

        if k > 0 {
            let interval = self.sample_interval;
            let mut per_flow: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            for (idx, (&fi, _)) in self.active.iter().enumerate() {
                per_flow.insert(fi, (self.fluid.phi[idx], self.fluid.flow_delay[idx]));
            }
            for fi in 0..self.flows.len() {
                let delta = self.delivered_bits[fi] - self.window_bits[fi];
                let is_active = per_flow.contains_key(&fi);
                if delta > 0.0 || is_active {
                    let delay = per_flow.get(&fi).map(|&(_, d)| d).unwrap_or(0.0);
                    self.flow_series.push(FlowWindow {
                        t_us: to_us(self.now),
                        flow: fi,
                        offered_bps: to_bps(self.offered[fi]),
                        achieved_bps: to_bps(delta / interval),
                        delay_us: to_us(delay),
                    });
                }
                self.window_bits[fi] = self.delivered_bits[fi];
            }
            if span > 0.0 {
                self.nf_final = (self.nf_integral - self.nf_integral_at_sample) / span;
            }
        }
        self.nf_integral_at_sample = self.nf_integral;
        self.last_sample_time = self.now;

        // Load-triggered rediscovery is emergent behavior of the plain
        // reactive baseline: congestion starves its MAC, links look
        // broken, and the source re-floods. The local-check variant has
        // no feedback loop after start time (that blindness is the thing
        // under study) and the reservation variants prevent the trigger.
        if self.overload.enabled && self.variant == Variant::Dsr {
            self.check_overloads()?;
        }

        let next = (k + 1) as f64 * self.sample_interval;
        if next <= self.duration {
            self.push(next, EventKind::SampleTick(k + 1));
        }
        Ok(())
    }

    /// Flows whose own loci run past the overload threshold re-flood for
    /// a fresh route in place; traffic keeps moving on the old route
    /// until the new discovery lands.
    fn check_overloads(&mut self) -> Result<()> {
        let mut candidates: Vec<usize> = Vec::new();
        for (&fi, af) in &self.active {
            if self.now - self.last_retry_at[fi] < self.overload.cooldown {
                continue;
            }
            let worst = af.route[..af.route.len() - 1]
                .iter()
                .map(|tx| self.fluid.sensed[tx.0] / self.capacity)
                .fold(0.0f64, f64::max);
            if worst > self.overload.threshold {
                candidates.push(fi);
            }
        }
        for fi in candidates {
            self.overload_attempts[fi] += 1;
            self.last_retry_at[fi] = self.now;
            self.trace.push(TraceEvent {
                t_us: to_us(self.now),
                node: Some(self.flows[fi].src.0),
                flow: Some(fi),
                kind: TraceKind::Retry {
                    attempt: self.break_retries[fi] + self.overload_attempts[fi],
                },
            });
            let src = self.flows[fi].src.0;
            let (flow, w) = (self.flows[fi].id, self.w[fi]);
            let acts = self.act_on(src, |n, ctx| n.start_flow(ctx, flow, w));
            self.process_actions(src, acts)?;
        }
        Ok(())
    }

    fn on_hello(&mut self, k: u64) -> Result<()> {
        for i in 0..self.nodes.len() {
            if let Action::Broadcast(msg) = self.nodes[i].hello() {
                self.send(i, msg, SendTarget::Broadcast)?;
            }
        }
        if let Some(interval) = self.proto_cfg.hello_interval {
            let next = (k + 1) as f64 * interval;
            if next <= self.duration {
                self.push(next, EventKind::HelloTick(k + 1));
            }
        }
        Ok(())
    }

    fn recompute_fluid(&mut self) {
        let loads: Vec<FlowLoad> = self
            .active
            .iter()
            .map(|(&fi, af)| FlowLoad {
                flow: self.flows[fi].id,
                route: af.route.clone(),
                w: self.w[fi],
                airtime: self.airtime[fi],
            })
            .collect();
        self.fluid = fluid::solve(&self.topo, &loads);
    }

    fn finalize(self) -> MetricsReport {
        let mut totals = Totals {
            flows: self.flows.len() as u32,
            ..Totals::default()
        };
        let mut flows = Vec::with_capacity(self.flows.len());
        for (fi, f) in self.flows.iter().enumerate() {
            let status = self.status[fi];
            match status {
                FlowStatus::Pending => totals.pending += 1,
                FlowStatus::Admitted => totals.admitted += 1,
                FlowStatus::Rejected => totals.rejected += 1,
                FlowStatus::Broken => totals.broken += 1,
                FlowStatus::Finished => totals.finished += 1,
            }
            let lifetime =
                (f.end_time.unwrap_or(self.duration).min(self.duration) - f.start_time).max(0.0);
            let offered_bits = self.offered[fi] * lifetime;
            let delivered_ratio =
                if offered_bits > 0.0 { self.delivered_bits[fi] / offered_bits } else { 0.0 };
            let active_s = self.active_seconds[fi];
            let mean_phi = if active_s > 0.0 {
                self.delivered_bits[fi] / (self.offered[fi] * active_s)
            } else {
                1.0
            };
            let false_admission =
                self.false_adm[fi] || (self.was_admitted[fi] && active_s > 0.0 && mean_phi < 0.95);
            if false_admission {
                totals.false_admissions += 1;
            }
            flows.push(FlowReport {
                id: fi,
                src: f.src.0,
                dst: f.dst.0,
                offered_bps: self.offered[fi].round() as u64,
                demand_bps: self.w[fi].round() as u64,
                status,
                reject_reason: self.reject_reason[fi],
                admitted_at_us: self.admitted_at[fi].map(to_us),
                hop_count: self.hops_admitted[fi],
                delivered_ratio_ppm: (delivered_ratio * 1e6).round().max(0.0) as u64,
                mean_rate_bps: if active_s > 0.0 {
                    (self.delivered_bits[fi] / active_s).round() as u64
                } else {
                    0
                },
                mean_delay_us: (active_s > 0.0)
                    .then(|| to_us(self.delay_integral[fi] / active_s)),
                retries: self.break_retries[fi] + self.overload_attempts[fi],
                false_admission,
            });
        }

        totals.offered_mean_bps = to_bps(self.offered_integral / self.duration);
        totals.admitted_throughput_bps = to_bps(self.thr_integral / self.duration);
        totals.n_f_mean_bps = to_bps(self.nf_integral / self.duration);
        totals.n_f_final_bps = to_bps(self.nf_final);
        totals.avg_per_hop_delay_us = if self.hop_seconds > 0.0 {
            to_us(self.hop_delay_integral / self.hop_seconds)
        } else {
            0
        };
        totals.control_messages =
            self.counts.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        totals.control_total = self.counts.values().sum();

        MetricsReport {
            name: self.name,
            variant: self.variant,
            seed: self.seed,
            duration_us: to_us(self.duration),
            node_count: self.topo.len(),
            sample_interval_us: to_us(self.sample_interval),
            totals,
            flows,
            node_series: self.node_series,
            flow_series: self.flow_series,
            trace: self.trace,
        }
    }
}
