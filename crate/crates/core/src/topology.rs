//! Network topology: node set, optional geometry, directed link state.
//!
//! Links are bidirectional by default; asymmetry only arises from fault
//! injection (e.g. discovery flooding, where an over-powered transmitter is
//! heard beyond its own reception range). Node addresses are unique hardware
//! identifiers and cannot be forged.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::NodeId;

/// Propagation delay per meter: 0.3 us per 100 m.
pub const PROP_NS_PER_M: f64 = 3.0;
/// Fixed propagation delay when no geometry is present.
pub const PROP_NS_DEFAULT: u64 = 300;

#[derive(Debug, Clone, Default)]
pub struct TopologyGraph {
    nodes: BTreeSet<NodeId>,
    positions: BTreeMap<NodeId, (f64, f64)>,
    /// Explicit adjacency. With geometry present, a link also requires the
    /// receiver to lie within the effective transmission range.
    links: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// Links forced down (directed), for fault modeling.
    down: BTreeSet<(NodeId, NodeId)>,
    /// Nominal communication range in meters (used with geometry).
    pub comm_range_m: f64,
}

impl TopologyGraph {
    pub fn new(comm_range_m: f64) -> Self {
        TopologyGraph { comm_range_m, ..Default::default() }
    }

    pub fn add_node(&mut self, id: NodeId) {
        assert!(self.nodes.insert(id), "duplicate node address {id}");
        self.links.entry(id).or_default();
    }

    pub fn add_node_at(&mut self, id: NodeId, x: f64, y: f64) {
        self.add_node(id);
        self.positions.insert(id, (x, y));
    }

    /// Adds a bidirectional link.
    pub fn add_link(&mut self, a: NodeId, b: NodeId) {
        assert!(a != b, "self link at {a}");
        assert!(self.nodes.contains(&a) && self.nodes.contains(&b));
        self.links.get_mut(&a).unwrap().insert(b);
        self.links.get_mut(&b).unwrap().insert(a);
    }

    pub fn set_link_down(&mut self, src: NodeId, dst: NodeId, is_down: bool) {
        if is_down {
            self.down.insert((src, dst));
        } else {
            self.down.remove(&(src, dst));
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn position(&self, id: NodeId) -> Option<(f64, f64)> {
        self.positions.get(&id).copied()
    }

    pub fn distance_m(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let (ax, ay) = self.position(a)?;
        let (bx, by) = self.position(b)?;
        Some(libm::sqrt((ax - bx) * (ax - bx) + (ay - by) * (ay - by)))
    }

    /// Propagation delay from `a` to `b` in nanoseconds.
    pub fn prop_delay_ns(&self, a: NodeId, b: NodeId) -> u64 {
        match self.distance_m(a, b) {
            Some(d) => libm::round(d * PROP_NS_PER_M) as u64,
            None => PROP_NS_DEFAULT,
        }
    }

    /// Nominal (power multiplier 1) neighbors of `src`, respecting link state.
    pub fn neighbors(&self, src: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.links
            .get(&src)
            .into_iter()
            .flat_map(|s| s.iter().copied())
            .filter(move |&dst| !self.down.contains(&(src, dst)))
    }

    /// Receivers of a transmission from `src` with the given power multiplier.
    ///
    /// Without geometry, power boosts have no extra reach beyond the explicit
    /// adjacency. With geometry, a boosted transmission reaches every node
    /// within `comm_range_m * power_mult`, which is how discovery floods make
    /// distant nodes appear as neighbors.
    pub fn receivers(&self, src: NodeId, power_mult: f64) -> Vec<NodeId> {
        let mut out: BTreeSet<NodeId> = self
            .neighbors(src)
            .filter(|&dst| self.within_range(src, dst, power_mult))
            .collect();
        if power_mult > 1.0 && !self.positions.is_empty() {
            let reach = self.comm_range_m * power_mult;
            for &dst in &self.nodes {
                if dst == src || self.down.contains(&(src, dst)) {
                    continue;
                }
                if let Some(d) = self.distance_m(src, dst) {
                    if d <= reach {
                        out.insert(dst);
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    fn within_range(&self, src: NodeId, dst: NodeId, power_mult: f64) -> bool {
        match self.distance_m(src, dst) {
            Some(d) => d <= self.comm_range_m * power_mult,
            None => true,
        }
    }

    /// Whether `listener` can hear energy from `speaker` (carrier sense).
    pub fn hears(&self, listener: NodeId, speaker: NodeId, power_mult: f64) -> bool {
        if listener == speaker {
            return true;
        }
        if self.down.contains(&(speaker, listener)) {
            return false;
        }
        if self.links.get(&speaker).is_some_and(|s| s.contains(&listener))
            && self.within_range(speaker, listener, power_mult)
        {
            return true;
        }
        if power_mult > 1.0 {
            if let Some(d) = self.distance_m(speaker, listener) {
                return d <= self.comm_range_m * power_mult;
            }
        }
        false
    }

    /// Adjacency as sorted pairs (a < b), for metrics enumeration.
    pub fn link_pairs(&self) -> Vec<(NodeId, NodeId)> {
        let mut pairs = Vec::new();
        for (&a, nbrs) in &self.links {
            for &b in nbrs {
                if a < b && !self.down.contains(&(a, b)) && !self.down.contains(&(b, a)) {
                    pairs.push((a, b));
                }
            }
        }
        pairs
    }

    /// Connectivity check over nominal links.
    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.nodes.iter().next() else { return true };
        let mut seen = BTreeSet::new();
        let mut stack = alloc::vec![start];
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            for m in self.neighbors(n) {
                if !seen.contains(&m) {
                    stack.push(m);
                }
            }
        }
        seen.len() == self.nodes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn links_are_bidirectional_by_default() {
        let mut t = TopologyGraph::new(30.0);
        t.add_node(NodeId(1));
        t.add_node(NodeId(2));
        t.add_link(NodeId(1), NodeId(2));
        assert_eq!(t.receivers(NodeId(1), 1.0), alloc::vec![NodeId(2)]);
        assert_eq!(t.receivers(NodeId(2), 1.0), alloc::vec![NodeId(1)]);
        t.set_link_down(NodeId(1), NodeId(2), true);
        assert!(t.receivers(NodeId(1), 1.0).is_empty());
        assert_eq!(t.receivers(NodeId(2), 1.0), alloc::vec![NodeId(1)]);
    }

    #[test]
    fn power_boost_extends_reach_with_geometry() {
        let mut t = TopologyGraph::new(30.0);
        t.add_node_at(NodeId(1), 0.0, 0.0);
        t.add_node_at(NodeId(2), 25.0, 0.0);
        t.add_node_at(NodeId(3), 80.0, 0.0);
        t.add_link(NodeId(1), NodeId(2));
        assert_eq!(t.receivers(NodeId(1), 1.0), alloc::vec![NodeId(2)]);
        // 3x power: reach 90 m, node 3 at 80 m now hears the flood
        let boosted = t.receivers(NodeId(1), 3.0);
        assert!(boosted.contains(&NodeId(3)));
        // but node 3's own transmissions do not reach node 1
        assert!(!t.receivers(NodeId(3), 1.0).contains(&NodeId(1)));
    }

    #[test]
    fn propagation_delay_scales_with_distance() {
        let mut t = TopologyGraph::new(200.0);
        t.add_node_at(NodeId(1), 0.0, 0.0);
        t.add_node_at(NodeId(2), 100.0, 0.0);
        t.add_link(NodeId(1), NodeId(2));
        assert_eq!(t.prop_delay_ns(NodeId(1), NodeId(2)), 300);
        let mut u = TopologyGraph::new(30.0);
        u.add_node(NodeId(1));
        u.add_node(NodeId(2));
        u.add_link(NodeId(1), NodeId(2));
        assert_eq!(u.prop_delay_ns(NodeId(1), NodeId(2)), PROP_NS_DEFAULT);
    }
}
