//! Admission-control protocol state machines.
//!
//! Each node runs one `Node` instance. Handlers consume a delivered control
//! message (or a timer) plus a read-only `Ctx` snapshot of the node's
//! current bandwidth estimates, mutate local state, and return `Action`s
//! for the engine to carry out: send messages, arm timers, or settle a
//! flow. Keeping side effects in the returned actions makes every handler
//! deterministic and unit-testable without an event loop.
//!
//! Five variants share the machinery. The three admission-controlled ones
//! differ only in how a route's wider neighborhood is consulted: a two-hop
//! relayed query, a single enlarged-radius query, or a locally maintained
//! neighborhood estimate. The two baselines skip per-route bookkeeping:
//! one admits everything, the other checks only the requester's own spare
//! bandwidth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bandwidth::FlowId;
use crate::contention::{CNeighborSet, RouteRecord};
use crate::error::{Error, Result};
use crate::geometry::NodeId;

/// Protocol flavor under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Admission control with a two-hop relayed neighborhood query.
    MbmpMultihop,
    /// Admission control with a single query sent at carrier-sense radius.
    MbmpPower,
    /// Admission control using a passive neighborhood busy estimate.
    MbmpCs,
    /// Route discovery with no admission control at all.
    Dsr,
    /// Each hop checks only its own spare bandwidth against one flow's
    /// demand; no contention accounting, no reservations.
    LocalOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::MbmpMultihop,
        Variant::MbmpPower,
        Variant::MbmpCs,
        Variant::Dsr,
        Variant::LocalOnly,
    ];

    /// True for the variants that perform contention-aware admission.
    pub fn admission_controlled(self) -> bool {
        matches!(self, Variant::MbmpMultihop | Variant::MbmpPower | Variant::MbmpCs)
    }

    /// True when the full-route check launches an explicit query.
    pub fn uses_query(self) -> bool {
        matches!(self, Variant::MbmpMultihop | Variant::MbmpPower)
    }

    /// True when checks compare against the neighborhood estimator too.
    pub fn uses_neighbor_estimate(self) -> bool {
        matches!(self, Variant::MbmpCs)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::MbmpMultihop => "mbmp-multihop",
            Variant::MbmpPower => "mbmp-power",
            Variant::MbmpCs => "mbmp-cs",
            Variant::Dsr => "dsr",
            Variant::LocalOnly => "local-only",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mbmp-multihop" => Ok(Variant::MbmpMultihop),
            "mbmp-power" => Ok(Variant::MbmpPower),
            "mbmp-cs" => Ok(Variant::MbmpCs),
            "dsr" => Ok(Variant::Dsr),
            "local-only" => Ok(Variant::LocalOnly),
            other => Err(Error::Config(vec![format!(
                "unknown variant {other:?}; expected one of mbmp-multihop, mbmp-power, mbmp-cs, dsr, local-only"
            )])),
        }
    }
}

/// Tunables shared by every node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Contention-set hop radius; entries further out never count.
    pub hop_limit: u32,
    /// Flood budget of the relayed neighborhood query.
    pub query_budget: u32,
    /// Silence from the neighborhood for this long means consent.
    pub query_timeout: f64,
    /// Unconfirmed reservations evaporate after this long.
    pub reservation_ttl: f64,
    /// A source gives up on admission after this long without an answer.
    pub admission_deadline: f64,
    /// Alternate routes a destination keeps per flow.
    pub max_backup_routes: usize,
    /// Route re-discoveries allowed after breaks before a flow is declared
    /// broken for good.
    pub retry_budget: u32,
    /// Optional neighbor beacon interval; `None` disables beacons.
    pub hello_interval: Option<f64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            hop_limit: 2,
            query_budget: 2,
            query_timeout: 0.05,
            reservation_ttl: 2.0,
            admission_deadline: 5.0,
            max_backup_routes: 3,
            retry_budget: 3,
            hello_interval: None,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.hop_limit == 0 {
            issues.push("protocol.hop_limit: must be >= 1".to_string());
        }
        for (name, v) in [
            ("protocol.query_timeout", self.query_timeout),
            ("protocol.reservation_ttl", self.reservation_ttl),
            ("protocol.admission_deadline", self.admission_deadline),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                issues.push(format!("{name}: must be finite and > 0"));
            }
        }
        if let Some(h) = self.hello_interval {
            if !(h > 0.0) || !h.is_finite() {
                issues.push("protocol.hello_interval: must be finite and > 0".to_string());
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

/// Message body, one arm per control-plane packet type.
#[derive(Debug, Clone, PartialEq)]
pub enum MessageKind {
    /// Flooded toward the destination; `route` is the path accumulated so
    /// far. Admission-controlled variants check and reserve en route.
    Request { route: Vec<NodeId> },
    /// Unicast back along the completed route.
    Reply { route: Vec<NodeId> },
    /// Asks nearby non-route nodes whether a completed route would starve
    /// them.
    Query { route: Vec<NodeId> },
    /// A queried node's veto, flooded back toward `issuer` over the hops
    /// the query traveled.
    QueryReject { issuer: NodeId },
    /// Tells downstream route nodes to drop their reservations.
    ReservationRelease { route: Vec<NodeId> },
    /// Reports a broken link; travels toward the source.
    RouteError { route: Vec<NodeId>, broken_at: NodeId },
    /// Periodic neighbor beacon.
    Hello,
}

impl MessageKind {
    pub fn label(&self) -> &'static str {
        match self {
            MessageKind::Request { .. } => "request",
            MessageKind::Reply { .. } => "reply",
            MessageKind::Query { .. } => "query",
            MessageKind::QueryReject { .. } => "query-reject",
            MessageKind::ReservationRelease { .. } => "release",
            MessageKind::RouteError { .. } => "route-error",
            MessageKind::Hello => "hello",
        }
    }
}

/// One control-plane packet.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMessage {
    pub kind: MessageKind,
    pub flow: FlowId,
    /// Bandwidth one hop of the flow consumes, bits/second.
    pub w: f64,
    /// Node that created the message.
    pub origin: NodeId,
    /// Route-discovery attempt this message belongs to.
    pub generation: u32,
    /// Unique per origin; floods keep it across rebroadcasts for
    /// duplicate suppression.
    pub msg_id: u64,
    /// Hops this copy will have traveled when received.
    pub hops_traveled: u32,
    /// Hop distance a receiver should assume to the immediate sender
    /// (2 for enlarged-radius sends, otherwise 1).
    pub sender_hops: u32,
    /// Remaining rebroadcasts for bounded floods.
    pub budget: u32,
}

impl ControlMessage {
    /// Approximate wire size, for optional control-overhead accounting:
    /// a fixed header plus one address per listed route node.
    pub fn wire_bits(&self) -> u64 {
        let route_len = match &self.kind {
            MessageKind::Request { route }
            | MessageKind::Reply { route }
            | MessageKind::Query { route }
            | MessageKind::ReservationRelease { route }
            | MessageKind::RouteError { route, .. } => route.len(),
            MessageKind::QueryReject { .. } | MessageKind::Hello => 0,
        };
        256 + 32 * route_len as u64
    }
}

/// Where in the admission pipeline a decision was made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionStage {
    /// Request-phase check against the route accumulated so far (the
    /// destination's single check also lands here).
    Partial,
    /// Reply-phase check against the completed route.
    Full,
    /// Evaluation of somebody else's route at a queried bystander.
    Query,
}

/// One admission evaluation, for traces and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRecord {
    pub node: NodeId,
    pub flow: FlowId,
    pub stage: DecisionStage,
    /// Contending transmitters counted against this node.
    pub count: u32,
    /// Bandwidth the flow would consume here, bits/second.
    pub consumed: f64,
    /// Spare bandwidth the node compared against, bits/second.
    pub available: f64,
    pub admitted: bool,
}

/// Why a source gave up on a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    /// The source's own request-phase check failed.
    LocalCheck,
    /// A reply-phase check failed somewhere on the route.
    FullCheck,
    /// A queried bystander vetoed the route.
    QueryVeto,
    /// No admission answer before the deadline.
    Deadline,
}

/// Timer kinds the engine schedules on behalf of nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    /// Query silence window at one route node.
    QueryTimeout,
    /// Source-side admission deadline for one discovery attempt.
    AdmissionDeadline { generation: u32 },
}

/// Side effects a handler requests from the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Deliver to all transmit-range neighbors.
    Broadcast(ControlMessage),
    /// Deliver to all carrier-sense-range neighbors.
    WideBroadcast(ControlMessage),
    /// Deliver to one transmit-range neighbor.
    Unicast { to: NodeId, msg: ControlMessage },
    /// Deliver to one carrier-sense-range neighbor.
    WideUnicast { to: NodeId, msg: ControlMessage },
    SetTimer { flow: FlowId, kind: TimerKind, at: f64 },
    /// The source settled the flow: start data traffic on `route`.
    Admitted { flow: FlowId, route: Vec<NodeId> },
    /// The source settled the flow negatively.
    Rejected { flow: FlowId, reason: RejectReason },
    /// The source learned its admitted route broke.
    RouteBroken { flow: FlowId },
    /// A reservation was freed before confirmation.
    Released { flow: FlowId },
    Decision(DecisionRecord),
}

/// Read-only per-call environment for one node's handler.
#[derive(Debug, Clone, Copy)]
pub struct Ctx<'a> {
    pub now: f64,
    pub variant: Variant,
    pub config: &'a ProtocolConfig,
    /// This node's own-locus spare-bandwidth estimate, bits/second.
    pub local_estimate: f64,
    /// This node's neighborhood spare-bandwidth estimate, bits/second.
    pub neigh_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ReservationState {
    Soft { expires: f64 },
    /// Confirmed, with the instant after which the flow's own traffic is
    /// assumed to have reached the busy-time estimators.
    Confirmed { visible_after: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Reservation {
    amount: f64,
    state: ReservationState,
}

impl Reservation {
    fn counts_against_others(&self, now: f64) -> bool {
        // An established flow transmits and is visible through the
        // busy-time estimators, so charging its reservation as well
        // would bill it twice. But the estimators only catch up a
        // period or two after the traffic starts; until then the hold
        // keeps counting, or two near-simultaneous admissions would
        // each be judged against a channel that shows neither.
        match self.state {
            ReservationState::Soft { expires } => now <= expires,
            ReservationState::Confirmed { visible_after } => now < visible_after,
        }
    }
}

/// Outstanding neighborhood query at one route node.
#[derive(Debug, Clone, PartialEq)]
struct PendingQuery {
    route: Vec<NodeId>,
    generation: u32,
    w: f64,
    /// `None` at the source: success settles the flow instead of
    /// forwarding the reply.
    upstream: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SourcePhase {
    Discovering,
    Admitted,
    Settled,
}

#[derive(Debug, Clone, PartialEq)]
struct SourceFlow {
    generation: u32,
    phase: SourcePhase,
}

/// Per-node protocol state.
#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub set: CNeighborSet,
    reservations: BTreeMap<FlowId, Reservation>,
    seen: BTreeSet<u64>,
    pending: BTreeMap<FlowId, PendingQuery>,
    sources: BTreeMap<FlowId, SourceFlow>,
    destinations: BTreeSet<FlowId>,
    backups: BTreeMap<FlowId, Vec<Vec<NodeId>>>,
    next_seq: u64,
}

impl Node {
    pub fn new(id: NodeId, hop_limit: u32) -> Self {
        Node {
            id,
            set: CNeighborSet::new(id, hop_limit),
            reservations: BTreeMap::new(),
            seen: BTreeSet::new(),
            pending: BTreeMap::new(),
            sources: BTreeMap::new(),
            destinations: BTreeSet::new(),
            backups: BTreeMap::new(),
            next_seq: 0,
        }
    }

    /// Marks this node as `flow`'s destination so it can recognize and
    /// answer the flow's requests. The engine registers destinations when
    /// the scenario is loaded.
    pub fn register_destination(&mut self, flow: FlowId) {
        self.destinations.insert(flow);
    }

    fn fresh_msg_id(&mut self) -> u64 {
        self.next_seq += 1;
        ((self.id.0 as u64) << 32) | self.next_seq
    }

    /// Spare bandwidth usable by `flow`: the raw estimate minus live soft
    /// reservations held for other flows.
    fn available(&self, estimate: f64, flow: FlowId, now: f64) -> f64 {
        let held: f64 = self
            .reservations
            .iter()
            .filter(|(f, r)| **f != flow && r.counts_against_others(now))
            .map(|(_, r)| r.amount)
            .sum();
        (estimate - held).max(0.0)
    }

    /// The estimate an admission check compares against: the local one,
    /// or the tighter of local and neighborhood for the variant that
    /// watches its neighborhood passively.
    fn check_estimate(&self, ctx: &Ctx) -> f64 {
        if ctx.variant.uses_neighbor_estimate() {
            ctx.local_estimate.min(ctx.neigh_estimate)
        } else {
            ctx.local_estimate
        }
    }

    fn reserve(&mut self, flow: FlowId, amount: f64, ctx: &Ctx) {
        self.reservations.insert(
            flow,
            Reservation {
                amount,
                state: ReservationState::Soft { expires: ctx.now + ctx.config.reservation_ttl },
            },
        );
    }

    /// Books a confirmed flow at what this node will actually sense. A
    /// request reserves the per-hop cost once, but once the route is fixed
    /// a holder near several of its transmitters will hear each of them,
    /// so the confirmed amount is the per-hop cost times the sensed
    /// transmitter count. The entry is created if the request flood never
    /// left soft state here; overhearing the confirmation is reason
    /// enough to expect the traffic. `visible_after` is the instant by
    /// which that traffic will show in the estimators (typically a couple
    /// of estimation periods out); until then the hold counts against
    /// other admissions.
    pub fn confirm(&mut self, flow: FlowId, amount: f64, visible_after: f64) {
        self.reservations.insert(
            flow,
            Reservation { amount, state: ReservationState::Confirmed { visible_after } },
        );
    }

    /// Drops any reservation for `flow`. Returns whether one existed.
    pub fn release(&mut self, flow: FlowId) -> bool {
        self.reservations.remove(&flow).is_some()
    }

    pub fn has_reservation(&self, flow: FlowId) -> bool {
        self.reservations.contains_key(&flow)
    }

    /// Periodic housekeeping: expired soft reservations and stale
    /// contention entries go away.
    pub fn tick(&mut self, now: f64, set_ttl: Option<f64>) {
        self.reservations.retain(|_, r| match r.state {
            ReservationState::Soft { expires } => now <= expires,
            ReservationState::Confirmed { .. } => true,
        });
        if let Some(ttl) = set_ttl {
            self.set.expire(now, ttl);
        }
    }

    pub fn backup_routes(&self, flow: FlowId) -> &[Vec<NodeId>] {
        self.backups.get(&flow).map(Vec::as_slice).unwrap_or(&[])
    }

    // === flow origination ===

    /// Starts (or restarts, after a break) admission for a flow rooted at
    /// this node. `w` is the flow's per-hop consumed bandwidth.
    pub fn start_flow(&mut self, ctx: &Ctx, flow: FlowId, w: f64) -> Vec<Action> {
        let generation = match self.sources.get(&flow) {
            Some(s) => s.generation + 1,
            None => 0,
        };
        self.sources.insert(flow, SourceFlow { generation, phase: SourcePhase::Discovering });
        self.pending.remove(&flow);
        self.release(flow);

        let mut actions = Vec::new();
        if ctx.variant.admission_controlled() {
            let route = RouteRecord::new(self.id);
            let count = self.set.contention_count(&route);
            let consumed = f64::from(count) * w;
            let available = self.available(self.check_estimate(ctx), flow, ctx.now);
            let admitted = available >= consumed;
            actions.push(Action::Decision(DecisionRecord {
                node: self.id,
                flow,
                stage: DecisionStage::Partial,
                count,
                consumed,
                available,
                admitted,
            }));
            if !admitted {
                self.sources.get_mut(&flow).unwrap().phase = SourcePhase::Settled;
                actions.push(Action::Rejected { flow, reason: RejectReason::LocalCheck });
                return actions;
            }
            self.reserve(flow, consumed, ctx);
        } else if ctx.variant == Variant::LocalOnly && ctx.local_estimate < w {
            self.sources.get_mut(&flow).unwrap().phase = SourcePhase::Settled;
            actions.push(Action::Rejected { flow, reason: RejectReason::LocalCheck });
            return actions;
        }

        let msg = ControlMessage {
            kind: MessageKind::Request { route: vec![self.id] },
            flow,
            w,
            origin: self.id,
            generation,
            msg_id: self.fresh_msg_id(),
            hops_traveled: 1,
            sender_hops: 1,
            budget: 0,
        };
        actions.push(Action::Broadcast(msg));
        actions.push(Action::SetTimer {
            flow,
            kind: TimerKind::AdmissionDeadline { generation },
            at: ctx.now + ctx.config.admission_deadline,
        });
        actions
    }

    // === message dispatch ===

    pub fn handle(&mut self, ctx: &Ctx, from: NodeId, msg: &ControlMessage) -> Vec<Action> {
        match &msg.kind {
            MessageKind::Request { route } => self.on_request(ctx, from, msg, route),
            MessageKind::Reply { route } => self.on_reply(ctx, from, msg, route),
            MessageKind::Query { route } => self.on_query(ctx, from, msg, route),
            MessageKind::QueryReject { issuer } => self.on_query_reject(ctx, from, msg, *issuer),
            MessageKind::ReservationRelease { route } => self.on_release(ctx, from, msg, route),
            MessageKind::RouteError { route, broken_at } => {
                self.on_route_error(ctx, from, msg, route, *broken_at)
            }
            MessageKind::Hello => {
                self.set.insert_min(from, msg.sender_hops, ctx.now);
                Vec::new()
            }
        }
    }

    fn on_request(
        &mut self,
        ctx: &Ctx,
        from: NodeId,
        msg: &ControlMessage,
        route: &[NodeId],
    ) -> Vec<Action> {
        let mut actions = Vec::new();
        if ctx.variant.admission_controlled() {
            self.set.insert_min(from, msg.sender_hops, ctx.now);
        }

        let is_dst = self.destinations.contains(&msg.flow);
        if !self.seen.insert(msg.msg_id) {
            // Duplicate flood copy. Destinations keep a few as alternate
            // routes; everyone else drops it.
            if is_dst && !route.contains(&self.id) {
                let mut alt = route.to_vec();
                alt.push(self.id);
                let backups = self.backups.entry(msg.flow).or_default();
                if backups.len() < ctx.config.max_backup_routes && !backups.contains(&alt) {
                    backups.push(alt);
                }
            }
            return actions;
        }
        if route.contains(&self.id) {
            return actions;
        }

        if is_dst {
            let mut record = RouteRecord::from_parts(route.to_vec(), false)
                .expect("flood routes are loop-checked at every hop");
            if record.push(self.id).is_err() || record.mark_complete().is_err() {
                return actions;
            }
            if ctx.variant.admission_controlled() {
                let count = self.set.contention_count(&record);
                let consumed = f64::from(count) * msg.w;
                let available = self.available(self.check_estimate(ctx), msg.flow, ctx.now);
                let admitted = available >= consumed;
                actions.push(Action::Decision(DecisionRecord {
                    node: self.id,
                    flow: msg.flow,
                    stage: DecisionStage::Partial,
                    count,
                    consumed,
                    available,
                    admitted,
                }));
                if !admitted {
                    self.learn_origin(ctx, msg);
                    return actions;
                }
                self.reserve(msg.flow, consumed, ctx);
            } else if ctx.variant == Variant::LocalOnly && ctx.local_estimate < msg.w {
                return actions;
            }
            let full = record.nodes().to_vec();
            let reply = ControlMessage {
                kind: MessageKind::Reply { route: full.clone() },
                flow: msg.flow,
                w: msg.w,
                origin: self.id,
                generation: msg.generation,
                msg_id: self.fresh_msg_id(),
                hops_traveled: 1,
                sender_hops: 1,
                budget: 0,
            };
            actions.push(Action::Unicast { to: from, msg: reply });
            self.learn_origin(ctx, msg);
            return actions;
        }

        // Forwarding candidate: check, reserve, extend, rebroadcast.
        let mut extended = route.to_vec();
        extended.push(self.id);
        if ctx.variant.admission_controlled() {
            let record = RouteRecord::from_parts(extended.clone(), false)
                .expect("loop checked above");
            let count = self.set.contention_count(&record);
            let consumed = f64::from(count) * msg.w;
            let available = self.available(self.check_estimate(ctx), msg.flow, ctx.now);
            let admitted = available >= consumed;
            actions.push(Action::Decision(DecisionRecord {
                node: self.id,
                flow: msg.flow,
                stage: DecisionStage::Partial,
                count,
                consumed,
                available,
                admitted,
            }));
            if !admitted {
                self.learn_origin(ctx, msg);
                return actions;
            }
            self.reserve(msg.flow, consumed, ctx);
        } else if ctx.variant == Variant::LocalOnly && ctx.local_estimate < msg.w {
            return actions;
        }
        let mut fwd = msg.clone();
        fwd.kind = MessageKind::Request { route: extended };
        fwd.hops_traveled += 1;
        actions.push(Action::Broadcast(fwd));
        self.learn_origin(ctx, msg);
        actions
    }

    fn learn_origin(&mut self, ctx: &Ctx, msg: &ControlMessage) {
        // Request-phase evidence about the originator lands after the
        // admission decision: the decision uses only what earlier traffic
        // taught this node.
        if ctx.variant.admission_controlled() {
            self.set.insert_min(msg.origin, msg.hops_traveled, ctx.now);
        }
    }

    fn on_reply(
        &mut self,
        ctx: &Ctx,
        from: NodeId,
        msg: &ControlMessage,
        route: &[NodeId],
    ) -> Vec<Action> {
        let mut actions = Vec::new();
        let Ok(record) = RouteRecord::from_parts(route.to_vec(), true) else {
            return actions;
        };
        if !record.contains(self.id) {
            return actions;
        }
        if ctx.variant.admission_controlled() {
            // Reply-phase evidence is merged before the decision: the
            // full-route check should see the whole route's geometry.
            self.set.insert_min(from, msg.sender_hops, ctx.now);
            self.set.merge_route(route, from, ctx.now);
        }

        let at_source = record.source() == self.id;
        if at_source {
            let Some(src) = self.sources.get(&msg.flow) else {
                return actions;
            };
            if src.phase != SourcePhase::Discovering || src.generation != msg.generation {
                return actions;
            }
        }

        if !ctx.variant.admission_controlled() {
            if at_source {
                self.sources.get_mut(&msg.flow).unwrap().phase = SourcePhase::Admitted;
                actions.push(Action::Admitted { flow: msg.flow, route: route.to_vec() });
            } else if let Some(up) = record.prev_hop(self.id) {
                let mut fwd = msg.clone();
                fwd.hops_traveled += 1;
                actions.push(Action::Unicast { to: up, msg: fwd });
            }
            return actions;
        }

        let count = self.set.contention_count(&record);
        let consumed = f64::from(count) * msg.w;
        let available = self.available(self.check_estimate(ctx), msg.flow, ctx.now);
        let admitted = available >= consumed;
        actions.push(Action::Decision(DecisionRecord {
            node: self.id,
            flow: msg.flow,
            stage: DecisionStage::Full,
            count,
            consumed,
            available,
            admitted,
        }));
        if !admitted {
            actions.extend(self.fail_route(ctx, msg.flow, msg.w, &record, at_source));
            return actions;
        }
        self.reserve(msg.flow, consumed, ctx);

        if ctx.variant.uses_query() {
            let upstream = if at_source { None } else { record.prev_hop(self.id) };
            self.pending.insert(
                msg.flow,
                PendingQuery {
                    route: route.to_vec(),
                    generation: msg.generation,
                    w: msg.w,
                    upstream,
                },
            );
            let query = ControlMessage {
                kind: MessageKind::Query { route: route.to_vec() },
                flow: msg.flow,
                w: msg.w,
                origin: self.id,
                generation: msg.generation,
                msg_id: self.fresh_msg_id(),
                hops_traveled: 1,
                sender_hops: 1,
                budget: ctx.config.query_budget.saturating_sub(1),
            };
            match ctx.variant {
                Variant::MbmpMultihop => actions.push(Action::Broadcast(query)),
                Variant::MbmpPower => {
                    let mut q = query;
                    q.sender_hops = 2;
                    q.hops_traveled = 2;
                    q.budget = 0;
                    actions.push(Action::WideBroadcast(q));
                }
                _ => unreachable!("uses_query covers exactly the two arms above"),
            }
            actions.push(Action::SetTimer {
                flow: msg.flow,
                kind: TimerKind::QueryTimeout,
                at: ctx.now + ctx.config.query_timeout,
            });
            return actions;
        }

        // Passive-neighborhood variant: the check above already consulted
        // the neighborhood estimate, so the reply moves on immediately.
        actions.extend(self.succeed_stage(ctx, msg.flow, msg.generation, msg.w, route, at_source));
        actions
    }

    /// A route node's reply-phase stage succeeded: forward the reply
    /// upstream, or settle the flow at the source.
    fn succeed_stage(
        &mut self,
        _ctx: &Ctx,
        flow: FlowId,
        generation: u32,
        w: f64,
        route: &[NodeId],
        at_source: bool,
    ) -> Vec<Action> {
        let mut actions = Vec::new();
        if at_source {
            self.sources.get_mut(&flow).unwrap().phase = SourcePhase::Admitted;
            actions.push(Action::Admitted { flow, route: route.to_vec() });
        } else {
            let record = RouteRecord::from_parts(route.to_vec(), true)
                .expect("validated by caller");
            if let Some(up) = record.prev_hop(self.id) {
                let reply = ControlMessage {
                    kind: MessageKind::Reply { route: route.to_vec() },
                    flow,
                    w,
                    origin: self.id,
                    generation,
                    msg_id: self.fresh_msg_id(),
                    hops_traveled: 1,
                    sender_hops: 1,
                    budget: 0,
                };
                actions.push(Action::Unicast { to: up, msg: reply });
            }
        }
        actions
    }

    /// A reply-phase check failed here: release this node's hold, tell the
    /// downstream part of the route to do the same, and settle the flow if
    /// this node is its source.
    fn fail_route(
        &mut self,
        _ctx: &Ctx,
        flow: FlowId,
        w: f64,
        record: &RouteRecord,
        at_source: bool,
    ) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.release(flow) {
            actions.push(Action::Released { flow });
        }
        self.pending.remove(&flow);
        if let Some(down) = record.next_hop(self.id) {
            let release = ControlMessage {
                kind: MessageKind::ReservationRelease { route: record.nodes().to_vec() },
                flow,
                w,
                origin: self.id,
                generation: 0,
                msg_id: self.fresh_msg_id(),
                hops_traveled: 1,
                sender_hops: 1,
                budget: 0,
            };
            actions.push(Action::Unicast { to: down, msg: release });
        }
        if at_source {
            self.sources.get_mut(&flow).unwrap().phase = SourcePhase::Settled;
            actions.push(Action::Rejected { flow, reason: RejectReason::FullCheck });
        }
        actions
    }

    fn on_query(
        &mut self,
        ctx: &Ctx,
        from: NodeId,
        msg: &ControlMessage,
        route: &[NodeId],
    ) -> Vec<Action> {
        let mut actions = Vec::new();
        self.set.insert_min(from, msg.sender_hops, ctx.now);
        // Queries describe the whole route; the originator is pinned at the
        // distance the query traveled so bystanders can count it.
        self.set.insert_min(msg.origin, msg.hops_traveled, ctx.now);
        if !self.seen.insert(msg.msg_id) {
            return actions;
        }

        let on_route = route.contains(&self.id);
        if !on_route {
            let Ok(record) = RouteRecord::from_parts(route.to_vec(), true) else {
                return actions;
            };
            let count = self.set.contention_count(&record);
            let consumed = f64::from(count) * msg.w;
            let available = self.available(self.check_estimate(ctx), msg.flow, ctx.now);
            let admitted = available >= consumed;
            actions.push(Action::Decision(DecisionRecord {
                node: self.id,
                flow: msg.flow,
                stage: DecisionStage::Query,
                count,
                consumed,
                available,
                admitted,
            }));
            if !admitted {
                let mut reject = ControlMessage {
                    kind: MessageKind::QueryReject { issuer: msg.origin },
                    flow: msg.flow,
                    w: msg.w,
                    origin: self.id,
                    generation: msg.generation,
                    msg_id: self.fresh_msg_id(),
                    hops_traveled: 1,
                    sender_hops: 1,
                    budget: 0,
                };
                if msg.sender_hops > 1 {
                    // Heard at enlarged radius; answer at the same radius.
                    actions.push(Action::WideUnicast { to: msg.origin, msg: reject });
                } else {
                    // The veto floods back over as many hops as the query
                    // spent getting here. A lone unicast would die at the
                    // first relay the issuer cannot hear directly, and a
                    // silently lost veto turns into an admission.
                    reject.budget = msg.hops_traveled.saturating_sub(1);
                    self.seen.insert(reject.msg_id);
                    actions.push(Action::Broadcast(reject));
                }
            }
        }
        if msg.budget > 0 {
            let mut fwd = msg.clone();
            fwd.budget -= 1;
            fwd.hops_traveled += 1;
            actions.push(Action::Broadcast(fwd));
        }
        actions
    }

    fn on_query_reject(
        &mut self,
        ctx: &Ctx,
        _from: NodeId,
        msg: &ControlMessage,
        issuer: NodeId,
    ) -> Vec<Action> {
        if issuer != self.id {
            // Someone else's veto passing through; extend the return
            // flood while it has legs left.
            if !self.seen.insert(msg.msg_id) || msg.budget == 0 {
                return Vec::new();
            }
            let mut fwd = msg.clone();
            fwd.budget -= 1;
            fwd.hops_traveled += 1;
            return vec![Action::Broadcast(fwd)];
        }
        let Some(pending) = self.pending.remove(&msg.flow) else {
            return Vec::new();
        };
        let record = RouteRecord::from_parts(pending.route.clone(), true)
            .expect("pending routes were validated on insert");
        let at_source = pending.upstream.is_none();
        let mut actions = self.fail_route(ctx, msg.flow, pending.w, &record, at_source);
        if at_source {
            // fail_route reported a generic full-check reject; the veto is
            // more specific.
            for a in &mut actions {
                if let Action::Rejected { reason, .. } = a {
                    *reason = RejectReason::QueryVeto;
                }
            }
        }
        actions
    }

    fn on_release(
        &mut self,
        _ctx: &Ctx,
        _from: NodeId,
        msg: &ControlMessage,
        route: &[NodeId],
    ) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.release(msg.flow) {
            actions.push(Action::Released { flow: msg.flow });
        }
        self.pending.remove(&msg.flow);
        if let Ok(record) = RouteRecord::from_parts(route.to_vec(), true) {
            if let Some(down) = record.next_hop(self.id) {
                let mut fwd = msg.clone();
                fwd.hops_traveled += 1;
                actions.push(Action::Unicast { to: down, msg: fwd });
            }
        }
        actions
    }

    fn on_route_error(
        &mut self,
        _ctx: &Ctx,
        _from: NodeId,
        msg: &ControlMessage,
        route: &[NodeId],
        _broken_at: NodeId,
    ) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.release(msg.flow) {
            actions.push(Action::Released { flow: msg.flow });
        }
        self.pending.remove(&msg.flow);
        let Ok(record) = RouteRecord::from_parts(route.to_vec(), true) else {
            return actions;
        };
        if record.source() == self.id {
            if let Some(src) = self.sources.get_mut(&msg.flow) {
                if src.phase == SourcePhase::Admitted {
                    src.phase = SourcePhase::Settled;
                    actions.push(Action::RouteBroken { flow: msg.flow });
                }
            }
        } else if let Some(up) = record.prev_hop(self.id) {
            let mut fwd = msg.clone();
            fwd.hops_traveled += 1;
            actions.push(Action::Unicast { to: up, msg: fwd });
        }
        actions
    }

    // === timers ===

    pub fn on_timer(&mut self, ctx: &Ctx, flow: FlowId, kind: TimerKind) -> Vec<Action> {
        match kind {
            TimerKind::QueryTimeout => {
                let Some(pending) = self.pending.remove(&flow) else {
                    return Vec::new();
                };
                let at_source = pending.upstream.is_none();
                let route = pending.route.clone();
                self.succeed_stage(ctx, flow, pending.generation, pending.w, &route, at_source)
            }
            TimerKind::AdmissionDeadline { generation } => {
                let Some(src) = self.sources.get_mut(&flow) else {
                    return Vec::new();
                };
                if src.phase != SourcePhase::Discovering || src.generation != generation {
                    return Vec::new();
                }
                src.phase = SourcePhase::Settled;
                self.pending.remove(&flow);
                let mut actions = Vec::new();
                if self.release(flow) {
                    actions.push(Action::Released { flow });
                }
                actions.push(Action::Rejected { flow, reason: RejectReason::Deadline });
                actions
            }
        }
    }

    /// Emits one neighbor beacon.
    pub fn hello(&mut self) -> Action {
        Action::Broadcast(ControlMessage {
            kind: MessageKind::Hello,
            flow: FlowId(usize::MAX),
            w: 0.0,
            origin: self.id,
            generation: 0,
            msg_id: self.fresh_msg_id(),
            hops_traveled: 1,
            sender_hops: 1,
            budget: 0,
        })
    }
}
