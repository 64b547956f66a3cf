//! Deterministic, seedable simulator and analysis toolkit for multi-hop
//! bandwidth management in mobile ad hoc networks.
//!
//! The crate models admission control for CBR flows over source-routed
//! wireless paths. Radio reach is split into three rings (transmission,
//! carrier-sensing, and neighbor-carrier-sensing range), and the channel is a
//! fluid airtime model rather than a packet-level MAC: each transmitting hop
//! of an admitted flow consumes its per-flow bandwidth at every location that
//! senses it. On top of that sit:
//!
//! - [`geometry`]: arenas, ring classification, random-waypoint mobility;
//! - [`bandwidth`]: per-packet airtime, per-flow bandwidth, and the smoothed
//!   idle-time estimators nodes use to judge spare capacity;
//! - [`contention`]: learned carrier-sense neighbor sets and the contention
//!   count that converts a route into consumed bandwidth at a node;
//! - [`protocol`]: the admission-control variants (two-hop flooded query,
//!   enlarged-radius query, estimator-only) and the two baselines (no
//!   admission, local-only admission);
//! - [`simcore`]: the event-driven engine, fluid contention solver, and
//!   metrics/trace assembly;
//! - [`analysis`]: closed-form and Monte-Carlo overhead ratios comparing
//!   two-hop query flooding against a single enlarged-radius broadcast;
//! - [`scenario`]: the JSON scenario schema shared by the CLI and tests.
//!
//! Everything is deterministic given the scenario seed: event ordering is
//! total, all iteration in decision paths is over ordered structures, and
//! serialized outputs quantize to integers (bits per second, microseconds).

pub mod analysis;
pub mod bandwidth;
pub mod contention;
pub mod error;
pub mod geometry;
pub mod protocol;
pub mod scenario;
pub mod simcore;

pub use error::{Error, Result};
pub use geometry::{Arena, LinkClass, NodeId, Position, RadioConfig, Topology};
pub use protocol::Variant;
pub use scenario::Scenario;
pub use simcore::{run, MetricsReport};
