//! Contention-neighborhood tracking and route records.
//!
//! Every node maintains a set of nodes it believes lie within its
//! contention range, each tagged with a hop-count estimate and a freshness
//! timestamp. The set is populated passively from control traffic: hearing
//! a node directly pins it at one hop, and route lists carried in control
//! messages place the remaining members relative to the sender. When a flow
//! asks for admission, the node counts how many of the flow's transmitting
//! hops fall inside its set (itself included if it is asked to forward) and
//! charges the flow that multiple of its per-hop bandwidth.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::NodeId;

/// What a node knows about one contention neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry {
    /// Smallest hop distance ever reported for this neighbor.
    pub hops: u32,
    /// Time of the most recent evidence, for expiry.
    pub last_updated: f64,
}

/// One node's view of its contention neighborhood.
///
/// Entries beyond `hop_limit` are retained (a later, shorter report may
/// revive them) but ignored when counting contenders. The owner never
/// appears in its own set.
#[derive(Debug, Clone, PartialEq)]
pub struct CNeighborSet {
    pub owner: NodeId,
    pub hop_limit: u32,
    entries: BTreeMap<NodeId, NeighborEntry>,
}

impl CNeighborSet {
    pub fn new(owner: NodeId, hop_limit: u32) -> Self {
        CNeighborSet { owner, hop_limit, entries: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, node: NodeId) -> Option<&NeighborEntry> {
        self.entries.get(&node)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &NeighborEntry)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    /// Records evidence that `node` is reachable in `hops` hops. Keeps the
    /// minimum hop count seen so far and refreshes the timestamp. Evidence
    /// about the owner itself is ignored.
    pub fn insert_min(&mut self, node: NodeId, hops: u32, now: f64) {
        if node == self.owner {
            return;
        }
        self.entries
            .entry(node)
            .and_modify(|e| {
                e.hops = e.hops.min(hops);
                e.last_updated = now;
            })
            .or_insert(NeighborEntry { hops, last_updated: now });
    }

    /// Folds a route list heard from `sender` into the set: each listed node
    /// is placed at `1 + |its index - sender's index|` hops, min-merged.
    /// Returns `false` without learning anything if the sender is not on the
    /// route (the offsets would be meaningless).
    pub fn merge_route(&mut self, nodes: &[NodeId], sender: NodeId, now: f64) -> bool {
        let Some(sender_idx) = nodes.iter().position(|&n| n == sender) else {
            return false;
        };
        for (idx, &node) in nodes.iter().enumerate() {
            let hops = 1 + idx.abs_diff(sender_idx) as u32;
            self.insert_min(node, hops, now);
        }
        true
    }

    /// Drops entries whose last evidence is older than `ttl` seconds.
    pub fn expire(&mut self, now: f64, ttl: f64) {
        self.entries.retain(|_, e| now - e.last_updated <= ttl);
    }

    /// Number of the route's transmitting hops this node will contend with.
    ///
    /// Transmitters are every listed node except a completed route's final
    /// destination. Listed transmitters count when they sit within
    /// `hop_limit` in the set; the owner counts itself when it is listed as
    /// a transmitter (it never stores itself).
    pub fn contention_count(&self, route: &RouteRecord) -> u32 {
        let mut count = 0;
        for &t in route.transmitters() {
            if t == self.owner {
                count += 1;
            } else if let Some(e) = self.entries.get(&t) {
                if e.hops <= self.hop_limit {
                    count += 1;
                }
            }
        }
        count
    }

    /// Channel bandwidth the flow would consume in this node's
    /// neighborhood: contenders times the per-hop flow bandwidth `w`.
    pub fn consumed_bandwidth(&self, route: &RouteRecord, w: f64) -> f64 {
        f64::from(self.contention_count(route)) * w
    }
}

/// An ordered, loop-free node list for one flow.
///
/// While a request travels toward the destination the record is partial and
/// every listed node is a (prospective) transmitter. Once the destination
/// appends itself and marks the record complete, the final node turns into
/// a pure receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteRecord {
    nodes: Vec<NodeId>,
    complete: bool,
}

impl RouteRecord {
    /// A fresh partial record containing only the source.
    pub fn new(source: NodeId) -> Self {
        RouteRecord { nodes: vec![source], complete: false }
    }

    /// Rebuilds a record from parts, revalidating loop freedom.
    pub fn from_parts(nodes: Vec<NodeId>, complete: bool) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidRoute("route must list at least one node".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &n in &nodes {
            if !seen.insert(n) {
                return Err(Error::InvalidRoute(format!("node {n} appears twice")));
            }
        }
        if complete && nodes.len() < 2 {
            return Err(Error::InvalidRoute("complete route needs source and destination".into()));
        }
        Ok(RouteRecord { nodes, complete })
    }

    /// Appends a forwarding node. Fails on loops and on sealed records.
    pub fn push(&mut self, node: NodeId) -> Result<()> {
        if self.complete {
            return Err(Error::InvalidRoute(format!("route is complete, cannot append {node}")));
        }
        if self.nodes.contains(&node) {
            return Err(Error::InvalidRoute(format!("node {node} appears twice")));
        }
        self.nodes.push(node);
        Ok(())
    }

    /// Seals the record; the last node becomes the destination.
    pub fn mark_complete(&mut self) -> Result<()> {
        if self.nodes.len() < 2 {
            return Err(Error::InvalidRoute("complete route needs source and destination".into()));
        }
        self.complete = true;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    /// The destination of a completed route.
    pub fn destination(&self) -> Option<NodeId> {
        if self.complete { self.nodes.last().copied() } else { None }
    }

    pub fn last(&self) -> NodeId {
        *self.nodes.last().expect("route records are never empty")
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }

    pub fn index_of(&self, node: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == node)
    }

    /// Number of transmissions needed end to end (complete routes only).
    pub fn hop_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// The node `node` forwards to, if any.
    pub fn next_hop(&self, node: NodeId) -> Option<NodeId> {
        let idx = self.index_of(node)?;
        self.nodes.get(idx + 1).copied()
    }

    /// The node `node` receives from, if any.
    pub fn prev_hop(&self, node: NodeId) -> Option<NodeId> {
        let idx = self.index_of(node)?;
        idx.checked_sub(1).map(|i| self.nodes[i])
    }

    /// The nodes that transmit data for this flow: everyone listed, minus
    /// the destination once the route is complete.
    pub fn transmitters(&self) -> &[NodeId] {
        if self.complete {
            &self.nodes[..self.nodes.len() - 1]
        } else {
            &self.nodes
        }
    }
}
