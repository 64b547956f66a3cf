//! Node placement, radio-range ring classification, and random-waypoint
//! mobility.
//!
//! A radio is described by three nested ranges. Out to `tx_range` a receiver
//! can decode frames; out to `cs_range` it only senses the channel busy; out
//! to `ncs_range` (by default twice the carrier-sensing range) its own
//! transmissions still consume airtime at nodes that sense *it*, which is the
//! range a node must reason about when it estimates bandwidth left in its
//! neighborhood. Any pair beyond `ncs_range` is independent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a node in its topology. Ids are dense: `0..topology.len()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A point in the arena, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rectangular simulation area with origin at (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Arena { width: 1000.0, height: 1000.0 }
    }
}

impl Arena {
    pub fn area(self) -> f64 {
        self.width * self.height
    }

    pub fn contains(self, p: Position) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    fn clamp(self, p: Position) -> Position {
        Position { x: p.x.clamp(0.0, self.width), y: p.y.clamp(0.0, self.height) }
    }
}

/// The three nested radio ranges plus raw channel capacity in bits/second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    /// Frames decode out to this range (meters).
    pub tx_range: f64,
    /// Carrier sensing: the channel reads busy out to this range.
    pub cs_range: f64,
    /// A node's own transmissions consume airtime at nodes out to this range,
    /// so this is the reach of the neighborhood bandwidth estimate.
    pub ncs_range: f64,
    /// Raw channel capacity in bits per second.
    pub channel_capacity: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            tx_range: 250.0,
            cs_range: 550.0,
            ncs_range: 1100.0,
            channel_capacity: 2.0e6,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if !(self.tx_range > 0.0) {
            issues.push("radio.tx_range: must be > 0".to_string());
        }
        if !(self.tx_range <= self.cs_range) {
            issues.push("radio.cs_range: must be >= tx_range".to_string());
        }
        if !(self.cs_range <= self.ncs_range) {
            issues.push("radio.ncs_range: must be >= cs_range".to_string());
        }
        if !(self.channel_capacity > 0.0) {
            issues.push("radio.channel_capacity: must be > 0".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

/// Which ring another node falls into, from the perspective of a given node.
/// Distances exactly on a boundary classify into the inner ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkClass {
    /// Within `tx_range`: frames decode.
    TxNeighbor,
    /// Within `cs_range` but beyond `tx_range`: energy only.
    CsNeighbor,
    /// Within `ncs_range` but beyond `cs_range`: consumes this node's
    /// transmissions without being sensed in return.
    NcsNeighbor,
    /// Beyond `ncs_range`: no interaction.
    Disconnected,
}

/// Immutable-by-convention snapshot of node positions plus the shared radio.
/// Mobility mutates positions in place between events.
#[derive(Debug, Clone)]
pub struct Topology {
    pub positions: Vec<Position>,
    pub radio: RadioConfig,
    pub arena: Arena,
}

impl Topology {
    pub fn new(positions: Vec<Position>, radio: RadioConfig, arena: Arena) -> Self {
        Topology { positions, radio, arena }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.positions.len()).map(NodeId)
    }

    pub fn position(&self, id: NodeId) -> Result<Position> {
        self.positions.get(id.0).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> Result<f64> {
        Ok(self.position(a)?.distance(self.position(b)?))
    }

    /// Ring classification of `b` as seen from `a`.
    pub fn classify(&self, a: NodeId, b: NodeId) -> Result<LinkClass> {
        let d = self.distance(a, b)?;
        let r = &self.radio;
        Ok(if d <= r.tx_range {
            LinkClass::TxNeighbor
        } else if d <= r.cs_range {
            LinkClass::CsNeighbor
        } else if d <= r.ncs_range {
            LinkClass::NcsNeighbor
        } else {
            LinkClass::Disconnected
        })
    }

    /// All nodes within `cs_range` of `a`, excluding `a`, ascending by id.
    pub fn cneighbors(&self, a: NodeId) -> Result<Vec<NodeId>> {
        self.nodes_within(a, self.radio.cs_range)
    }

    /// All nodes within `tx_range` of `a`, excluding `a`, ascending by id.
    pub fn tx_neighbors(&self, a: NodeId) -> Result<Vec<NodeId>> {
        self.nodes_within(a, self.radio.tx_range)
    }

    /// All nodes within `radius` of `a`, excluding `a`, ascending by id.
    pub fn nodes_within(&self, a: NodeId, radius: f64) -> Result<Vec<NodeId>> {
        let origin = self.position(a)?;
        Ok(self
            .positions
            .iter()
            .enumerate()
            .filter(|(i, p)| *i != a.0 && origin.distance(**p) <= radius)
            .map(|(i, _)| NodeId(i))
            .collect())
    }
}

/// Random-waypoint parameters. Speeds are drawn uniformly from
/// `[min_speed, max_speed]`; a node pauses `pause_time` seconds at each
/// waypoint before drawing the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityConfig {
    pub min_speed: f64,
    pub max_speed: f64,
    pub pause_time: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig { min_speed: 5.0, max_speed: 5.0, pause_time: 20.0 }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if !(self.min_speed >= 0.0) {
            issues.push("mobility.min_speed: must be >= 0".to_string());
        }
        if !(self.min_speed <= self.max_speed) {
            issues.push("mobility.max_speed: must be >= min_speed".to_string());
        }
        if !(self.pause_time >= 0.0) {
            issues.push("mobility.pause_time: must be >= 0".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct WaypointState {
    waypoint: Position,
    speed: f64,
    pause_remaining: f64,
}

/// Random-waypoint mobility state for every node of a topology. All draws are
/// made in ascending node order, so trajectories depend only on the RNG seed
/// and the sequence of step intervals.
#[derive(Debug, Clone)]
pub struct RandomWaypoint {
    config: MobilityConfig,
    states: Vec<WaypointState>,
}

const ARRIVAL_EPS: f64 = 1e-9;

impl RandomWaypoint {
    /// Draws the initial waypoint and speed for every node.
    pub fn new<R: Rng>(topology: &Topology, config: MobilityConfig, rng: &mut R) -> Self {
        let states = topology
            .positions
            .iter()
            .map(|_| Self::draw(&config, topology.arena, rng))
            .collect();
        RandomWaypoint { config, states }
    }

    fn draw<R: Rng>(config: &MobilityConfig, arena: Arena, rng: &mut R) -> WaypointState {
        let waypoint = Position {
            x: rng.gen_range(0.0..=arena.width),
            y: rng.gen_range(0.0..=arena.height),
        };
        let speed = rng.gen_range(config.min_speed..=config.max_speed);
        WaypointState { waypoint, speed, pause_remaining: 0.0 }
    }

    /// Advances every node by `dt` seconds, mutating `topology.positions`.
    /// A node moves straight toward its waypoint, pauses there, then draws a
    /// fresh waypoint and speed. Zero-speed nodes that are not at their
    /// waypoint stay put without consuming randomness.
    pub fn step<R: Rng>(&mut self, topology: &mut Topology, dt: f64, rng: &mut R) {
        debug_assert_eq!(self.states.len(), topology.positions.len());
        let arena = topology.arena;
        for (pos, st) in topology.positions.iter_mut().zip(self.states.iter_mut()) {
            let mut remaining = dt;
            while remaining > 0.0 {
                if st.pause_remaining > 0.0 {
                    let consumed = st.pause_remaining.min(remaining);
                    st.pause_remaining -= consumed;
                    remaining -= consumed;
                    if st.pause_remaining <= 0.0 {
                        *st = Self::draw(&self.config, arena, rng);
                    }
                    continue;
                }
                let dist = pos.distance(st.waypoint);
                if dist <= ARRIVAL_EPS {
                    *pos = arena.clamp(st.waypoint);
                    if self.config.pause_time > 0.0 {
                        st.pause_remaining = self.config.pause_time;
                    } else {
                        *st = Self::draw(&self.config, arena, rng);
                    }
                    continue;
                }
                if st.speed <= 0.0 {
                    break;
                }
                let reach = st.speed * remaining;
                if reach < dist {
                    let f = reach / dist;
                    pos.x += (st.waypoint.x - pos.x) * f;
                    pos.y += (st.waypoint.y - pos.y) * f;
                    *pos = arena.clamp(*pos);
                    remaining = 0.0;
                } else {
                    *pos = arena.clamp(st.waypoint);
                    remaining -= dist / st.speed;
                    if self.config.pause_time > 0.0 {
                        st.pause_remaining = self.config.pause_time;
                    } else {
                        *st = Self::draw(&self.config, arena, rng);
                    }
                }
            }
        }
    }
}
