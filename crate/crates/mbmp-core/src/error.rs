//! Crate-wide error type.

use crate::geometry::NodeId;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A node id outside the topology was passed to a geometry or protocol
    /// operation.
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    /// An observation interval was empty, reversed, or discontinuous with the
    /// estimator's clock.
    #[error("invalid observation interval: {0}")]
    InvalidInterval(String),

    /// Busy intervals handed to an estimator overlap each other.
    #[error("overlapping busy intervals at t={0}")]
    OverlappingBusy(f64),

    /// A route record violates structural rules (loop, too short, endpoints).
    #[error("invalid route: {0}")]
    InvalidRoute(String),

    /// Scenario or sweep configuration failed validation. Each entry names
    /// the offending key and the rule it broke.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// An analysis ratio has a zero denominator (empty density field, or no
    /// usable Monte-Carlo trials).
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
