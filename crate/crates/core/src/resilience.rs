//! Fault injection and byzantine detection/correction primitives.
//!
//! The fault model covers fail-stop plus the radio-observable subset of
//! byzantine faults: spikes, outliers, intermittent communication, selective
//! forwarding, discovery flooding and altered time information. Faulty nodes
//! may collude.
//!
//! Detection rests on bridge nodes monitoring the scheduled synchronization
//! traffic of their cluster and flooding consensus messages when a broadcast
//! is missing or carries time outside the configured threshold. Agreement
//! needs `floor(n_i/2) + 1` distinct, mutually consistent messages.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::message::{ByzBody, MsgType};
use crate::rng::mix64;
use crate::{NodeId, SimNs};

/// Opaque keyed token standing in for the AES authentication of bridge
/// claims. Forging one requires knowing both cluster-head addresses as link
/// neighbors, which models the bi-directionality check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AuthToken(pub u64);

/// Derives the bridge authentication token for `cb` bridging `pair`.
///
/// The pair is order-normalized: the physical key is the set of CH identities.
pub fn cb_token(pair: (NodeId, NodeId), cb: NodeId) -> AuthToken {
    let (lo, hi) = if pair.0 <= pair.1 { (pair.0, pair.1) } else { (pair.1, pair.0) };
    let key = mix64(lo.0 ^ 0x6cb5_79c1_2f53_9d41) ^ mix64(hi.0.rotate_left(23));
    AuthToken(mix64(key ^ mix64(cb.0)))
}

/// Verifies a bridge claim token against the exact CH address pair.
pub fn verify_cb_token(token: AuthToken, pair: (NodeId, NodeId), cb: NodeId) -> bool {
    cb_token(pair, cb) == token
}

/// Fault categories injectable into a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FaultKind {
    /// Node goes silent and stops processing.
    FailStop,
    /// Transient surge added to advertised time.
    Spike,
    /// Advertised time pushed beyond the acceptance range.
    Outlier,
    /// Each transmission is dropped with the given probability.
    Intermittent,
    /// Synchronization frames are dropped (probability in `magnitude`).
    SelectiveForward,
    /// Transmit power multiplied during discovery (HELLO flood).
    DiscoveryFlood,
    /// Constant error added to advertised time.
    AlteredTime,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::FailStop => "FAIL_STOP",
            FaultKind::Spike => "SPIKE",
            FaultKind::Outlier => "OUTLIER",
            FaultKind::Intermittent => "INTERMITTENT",
            FaultKind::SelectiveForward => "SELECTIVE_FORWARD",
            FaultKind::DiscoveryFlood => "DISCOVERY_FLOOD",
            FaultKind::AlteredTime => "ALTERED_TIME",
        }
    }

    pub const ALL: [FaultKind; 7] = [
        FaultKind::FailStop,
        FaultKind::Spike,
        FaultKind::Outlier,
        FaultKind::Intermittent,
        FaultKind::SelectiveForward,
        FaultKind::DiscoveryFlood,
        FaultKind::AlteredTime,
    ];
}

/// One injected fault.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub target: NodeId,
    pub kind: FaultKind,
    /// Activation window in true time.
    pub from_ns: SimNs,
    pub until_ns: SimNs,
    /// Time error in microseconds (SPIKE/OUTLIER/ALTERED_TIME), drop
    /// probability (INTERMITTENT/SELECTIVE_FORWARD), or transmit power
    /// multiplier (DISCOVERY_FLOOD). Unused for FAIL_STOP.
    pub magnitude: f64,
    /// Cooperating faulty nodes.
    pub colluders: BTreeSet<NodeId>,
}

impl FaultSpec {
    /// Magnitude semantics must match the kind.
    pub fn validate(&self) -> Result<(), String> {
        use FaultKind::*;
        if self.until_ns < self.from_ns {
            return Err(String::from("fault window ends before it starts"));
        }
        match self.kind {
            Intermittent | SelectiveForward => {
                if !(0.0..=1.0).contains(&self.magnitude) {
                    return Err(String::from("drop probability must be within [0, 1]"));
                }
            }
            DiscoveryFlood => {
                if self.magnitude < 1.0 {
                    return Err(String::from("flood power multiplier must be >= 1"));
                }
            }
            Spike | Outlier | AlteredTime => {
                if self.magnitude == 0.0 {
                    return Err(String::from("time fault magnitude must be non-zero"));
                }
            }
            FailStop => {}
        }
        Ok(())
    }

    pub fn active_at(&self, t: SimNs) -> bool {
        (self.from_ns..self.until_ns).contains(&t)
    }

    /// Advertised-time shift contributed by this fault, microseconds.
    pub fn time_shift_us(&self) -> f64 {
        match self.kind {
            FaultKind::Spike | FaultKind::Outlier | FaultKind::AlteredTime => self.magnitude,
            _ => 0.0,
        }
    }

    /// Whether this fault silences a given outgoing frame (given a coin flip
    /// drawn by the caller for the probabilistic kinds).
    pub fn drops_tx(&self, msg_type: MsgType, coin: bool) -> bool {
        match self.kind {
            FaultKind::FailStop => true,
            FaultKind::Intermittent => coin,
            FaultKind::SelectiveForward => msg_type == MsgType::Sync && coin,
            _ => false,
        }
    }

    /// Transmit power multiplier while the node is in a discovery state.
    pub fn discovery_power_mult(&self) -> f64 {
        if self.kind == FaultKind::DiscoveryFlood {
            self.magnitude
        } else {
            1.0
        }
    }
}

/// Byzantine quorum for a node with `n_i` neighbors: `floor(n_i/2) + 1`.
pub fn quorum(n_i: usize) -> usize {
    n_i / 2 + 1
}

/// A group of mutually consistent byzantine consensus messages about one
/// suspect.
#[derive(Debug, Clone)]
pub struct TallyGroup {
    pub suspect: NodeId,
    /// First correct-time value seen; consistency anchor.
    pub time_anchor: f64,
    /// Distinct transmitters heard for this group.
    pub senders: BTreeSet<NodeId>,
    /// Most recent message of the group (freshest time estimate).
    pub latest: ByzBody,
}

/// Per-round tally of byzantine consensus messages at one node.
#[derive(Debug, Clone, Default)]
pub struct ConsensusTally {
    groups: Vec<TallyGroup>,
}

impl ConsensusTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.groups.clear();
    }

    /// Records a message copy heard from `sender`. Messages group by suspect
    /// and time consistency within `tolerance_us`. Returns the group's
    /// distinct-sender count after recording.
    pub fn record(&mut self, sender: NodeId, body: &ByzBody, tolerance_us: f64) -> usize {
        for g in self.groups.iter_mut() {
            if g.suspect == body.suspect
                && libm::fabs(body.correct_time - g.time_anchor) <= tolerance_us
            {
                g.senders.insert(sender);
                g.latest = *body;
                return g.senders.len();
            }
        }
        let mut senders = BTreeSet::new();
        senders.insert(sender);
        self.groups.push(TallyGroup {
            suspect: body.suspect,
            time_anchor: body.correct_time,
            senders,
            latest: *body,
        });
        1
    }

    /// The first group meeting `quorum` distinct senders, if any.
    pub fn agreement(&self, quorum: usize) -> Option<&TallyGroup> {
        self.groups.iter().find(|g| g.senders.len() >= quorum)
    }

    pub fn groups(&self) -> &[TallyGroup] {
        &self.groups
    }
}

/// Assumption violations detected against ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssumptionViolation {
    /// A node lacks `floor(n_i/2)+1` fault-free neighbors.
    FaultFreeNeighborMinority { node: NodeId, fault_free: usize, needed: usize },
    /// A cluster pair lacks a fault-free majority of bridges.
    BridgeMajorityFaulty { pair: (NodeId, NodeId), fault_free: usize, needed: usize },
    /// Fewer than two connected clusters (or isolated clusters present).
    PartitionedOrSingleCluster { clusters: usize, bridged: usize },
}

impl fmt::Display for AssumptionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssumptionViolation::FaultFreeNeighborMinority { node, fault_free, needed } => write!(
                f,
                "node {node} has {fault_free} fault-free neighbors, needs {needed}"
            ),
            AssumptionViolation::BridgeMajorityFaulty { pair, fault_free, needed } => write!(
                f,
                "cluster pair ({}, {}) has {fault_free} fault-free bridges, needs {needed}",
                pair.0, pair.1
            ),
            AssumptionViolation::PartitionedOrSingleCluster { clusters, bridged } => write!(
                f,
                "{clusters} clusters with {bridged} bridged pairs: network partitioned or single-cluster"
            ),
        }
    }
}

/// Checks the byzantine-consensus assumptions against ground truth: the set
/// of faulty nodes, each node's neighbor list, and the bridge structure.
///
/// `neighbors` maps each node to its radio neighbors; `bridges` maps each
/// CH pair to the bridge nodes connecting it.
pub fn check_assumptions(
    neighbors: &alloc::collections::BTreeMap<NodeId, BTreeSet<NodeId>>,
    bridges: &alloc::collections::BTreeMap<(NodeId, NodeId), BTreeSet<NodeId>>,
    faulty: &BTreeSet<NodeId>,
    cluster_count: usize,
) -> Vec<AssumptionViolation> {
    let mut out = Vec::new();
    for (&node, nbrs) in neighbors {
        let n_i = nbrs.len();
        let fault_free = nbrs.iter().filter(|n| !faulty.contains(n)).count();
        let needed = quorum(n_i);
        if fault_free < needed {
            out.push(AssumptionViolation::FaultFreeNeighborMinority { node, fault_free, needed });
        }
    }
    for (&pair, cbs) in bridges {
        let fault_free = cbs.iter().filter(|n| !faulty.contains(n)).count();
        let needed = quorum(cbs.len());
        if fault_free < needed {
            out.push(AssumptionViolation::BridgeMajorityFaulty { pair, fault_free, needed });
        }
    }
    if cluster_count < 2 || (cluster_count >= 2 && bridges.is_empty()) {
        out.push(AssumptionViolation::PartitionedOrSingleCluster {
            clusters: cluster_count,
            bridged: bridges.len(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_verifies_only_exact_pair_and_claimant() {
        let pair = (NodeId(101), NodeId(102));
        let tok = cb_token(pair, NodeId(51));
        assert!(verify_cb_token(tok, pair, NodeId(51)));
        // pair order does not matter (the key is the set of CH ids)
        assert!(verify_cb_token(tok, (NodeId(102), NodeId(101)), NodeId(51)));
        // replay against a different pair fails
        assert!(!verify_cb_token(tok, (NodeId(101), NodeId(103)), NodeId(51)));
        // another claimant cannot reuse the token
        assert!(!verify_cb_token(tok, pair, NodeId(52)));
    }

    #[test]
    fn quorum_matches_floor_half_plus_one() {
        assert_eq!(quorum(4), 3);
        assert_eq!(quorum(5), 3);
        assert_eq!(quorum(6), 4);
        assert_eq!(quorum(7), 4);
    }

    #[test]
    fn tally_groups_by_suspect_and_consistency() {
        let mut tally = ConsensusTally::new();
        let base = ByzBody {
            initiator: NodeId(51),
            reference: NodeId(51),
            correct_time: 1_000_000.0,
            correct_rate: 1.0,
            suspect: NodeId(102),
        };
        assert_eq!(tally.record(NodeId(51), &base, 500.0), 1);
        let mut copy = base;
        copy.correct_time = 1_000_120.0; // fresh re-stamp, consistent
        assert_eq!(tally.record(NodeId(3), &copy, 500.0), 2);
        // duplicate sender does not inflate the count
        assert_eq!(tally.record(NodeId(3), &copy, 500.0), 2);
        // inconsistent value opens a new group
        let mut lie = base;
        lie.correct_time = 1_010_000.0;
        assert_eq!(tally.record(NodeId(9), &lie, 500.0), 1);
        assert!(tally.agreement(3).is_none());
        assert_eq!(tally.record(NodeId(4), &copy, 500.0), 3);
        let g = tally.agreement(3).unwrap();
        assert_eq!(g.suspect, NodeId(102));
        assert_eq!(g.senders.len(), 3);
    }

    #[test]
    fn fault_spec_validation() {
        let mut s = FaultSpec {
            target: NodeId(1),
            kind: FaultKind::Intermittent,
            from_ns: 0,
            until_ns: 100,
            magnitude: 0.5,
            colluders: BTreeSet::new(),
        };
        assert!(s.validate().is_ok());
        s.magnitude = 1.5;
        assert!(s.validate().is_err());
        s.kind = FaultKind::DiscoveryFlood;
        s.magnitude = 3.0;
        assert!(s.validate().is_ok());
        s.magnitude = 0.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn assumption_check_flags_minority() {
        use alloc::collections::BTreeMap;
        let mut neighbors: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        let ids: Vec<NodeId> = (1..=5).map(NodeId).collect();
        for &a in &ids {
            neighbors.insert(a, ids.iter().copied().filter(|&b| b != a).collect());
        }
        let mut bridges = BTreeMap::new();
        bridges.insert((NodeId(1), NodeId(2)), BTreeSet::from([NodeId(3)]));
        // 4 neighbors each; quorum 3; two faults leave only 2 fault-free for some
        let faulty = BTreeSet::from([NodeId(4), NodeId(5)]);
        let v = check_assumptions(&neighbors, &bridges, &faulty, 2);
        assert!(v
            .iter()
            .any(|x| matches!(x, AssumptionViolation::FaultFreeNeighborMinority { .. })));
        let ok = check_assumptions(&neighbors, &bridges, &BTreeSet::new(), 2);
        assert!(ok.is_empty());
    }
}
