//! The C-sync node state machine.
//!
//! Two phases drive every node. Clustering (five states) discovers neighbors,
//! loosely synchronizes clocks by neighbor averaging, elects cluster heads by
//! degree, authenticates cluster bridges, and elects bridge heads. Consensus
//! (two states) assigns transmission slots so that local centers — the CHs
//! with the most CH connections — emerge at the network core, then mirrors
//! the slots so time information flows from the local centers outward while
//! everyone else sleeps. After a configured number of synchronization rounds
//! the network re-clusters.

pub mod election;
mod node;

pub use node::{CsyncNode, CsyncTimer};

use crate::NodeId;

/// Protocol roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleKind {
    /// Common cluster member.
    Cm,
    /// Cluster head.
    Ch,
    /// Cluster bridge.
    Cb,
    /// Cluster bridge head (representative CB of a CH pair).
    Cbh,
}

impl RoleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleKind::Cm => "CM",
            RoleKind::Ch => "CH",
            RoleKind::Cb => "CB",
            RoleKind::Cbh => "CBH",
        }
    }

    /// Bridge heads are bridges.
    pub fn is_bridge(self) -> bool {
        matches!(self, RoleKind::Cb | RoleKind::Cbh)
    }
}

/// Protocol state-machine states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Discovery,
    ElectionRevelation,
    ElectionDeclaration,
    ConnectionRevelation,
    ConnectionDeclaration,
    ConsensusConvergence,
    ConsensusSynchronization,
    Idle,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Discovery => "DISCOVERY",
            Phase::ElectionRevelation => "ELECTION_REVELATION",
            Phase::ElectionDeclaration => "ELECTION_DECLARATION",
            Phase::ConnectionRevelation => "CONNECTION_REVELATION",
            Phase::ConnectionDeclaration => "CONNECTION_DECLARATION",
            Phase::ConsensusConvergence => "CONSENSUS_CONVERGENCE",
            Phase::ConsensusSynchronization => "CONSENSUS_SYNCHRONIZATION",
            Phase::Idle => "IDLE",
        }
    }
}

/// Protocol timing and consensus parameters. All durations are logical
/// microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    /// State-transition interval gating the clustering states.
    pub st_interval_us: f64,
    /// Discovery loose-synchronization gate; defaults to the worst-case CSMA
    /// backoff (8 slots of 320 us).
    pub sync_threshold_us: f64,
    pub max_slots: u8,
    /// Synchronization rounds before re-clustering.
    pub max_count: u32,
    pub slot_duration_us: f64,
    pub idle_slots: u32,
    /// Discovery beacon period.
    pub disc_beacon_us: f64,
    /// Minimum averaging updates before the discovery gate may pass.
    pub min_disc_updates: u32,
    /// Error threshold that triggers byzantine consensus.
    pub byz_threshold_us: f64,
    /// Consecutive misses/violations before a consensus message fires.
    pub byz_consecutive: u32,
    /// Opt-in consensus flooding for single-cluster networks (keeps common
    /// nodes awake; trades power for fault tolerance).
    pub single_cluster_consensus: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            st_interval_us: 5_000_000.0,
            sync_threshold_us: 2_560.0,
            max_slots: 10,
            max_count: 10,
            slot_duration_us: 300_000.0,
            idle_slots: 10,
            disc_beacon_us: 1_000_000.0,
            min_disc_updates: 2,
            byz_threshold_us: 500.0,
            byz_consecutive: 1,
            single_cluster_consensus: false,
        }
    }
}

impl ProtocolConfig {
    /// Convergence phase length in logical microseconds.
    pub fn convergence_len_us(&self) -> f64 {
        self.max_slots as f64 * self.slot_duration_us
    }

    /// One synchronization round (sync windows plus idle phase).
    pub fn cycle_len_us(&self) -> f64 {
        (self.max_slots as u32 + self.idle_slots) as f64 * self.slot_duration_us
    }
}

/// Claims a bridge records about its two cluster heads.
#[derive(Debug, Clone, Copy, Default)]
pub struct PairSlots {
    pub slots: [Option<u8>; 2],
}

/// Identity helper: normalized CH pair ordering.
pub fn norm_pair(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
