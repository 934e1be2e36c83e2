//! Radio frame contents.
//!
//! A frame carries the sender address, MAC-timestamped time information and a
//! body whose variant constrains which optional fields exist, mirroring the
//! per-state message schema of the protocol.

use alloc::vec::Vec;

use crate::resilience::AuthToken;
use crate::NodeId;

/// Wire-level message type tags, one per protocol state family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MsgType {
    Discovery,
    Election,
    Connection,
    SlotClaim,
    SlotAck,
    Sync,
    ByzConsensus,
}

impl MsgType {
    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::Discovery => "DISCOVERY",
            MsgType::Election => "ELECTION",
            MsgType::Connection => "CONNECTION",
            MsgType::SlotClaim => "SLOT_CLAIM",
            MsgType::SlotAck => "SLOT_ACK",
            MsgType::Sync => "SYNC",
            MsgType::ByzConsensus => "BYZ_CONSENSUS",
        }
    }
}

/// A slot claim relayed between cluster heads, also the input to local-center
/// election.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClaimEntry {
    pub ch: NodeId,
    pub slot: u8,
    pub ch_neighbor_count: u32,
}

/// Connection-state payloads.
#[derive(Debug, Clone, PartialEq)]
pub enum ConnectionBody {
    /// A common node claims bridge status for a CH pair, authenticated by a
    /// token keyed on both CH addresses.
    BridgeClaim { pair: (NodeId, NodeId), token: AuthToken, degree: u32 },
    /// A cluster head echoes the verified bridge claims it registered so that
    /// bridge rivals sharing the pair can elect their head.
    ChEcho { candidates: Vec<(NodeId, u32, (NodeId, NodeId))> },
    /// The elected bridge head announces itself for its CH pair.
    BridgeHeadDeclare { pair: (NodeId, NodeId) },
}

/// Byzantine consensus flood payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ByzBody {
    /// Node that first raised the alarm.
    pub initiator: NodeId,
    /// Bridge (CB/CBH) whose observation backs the message; correct nodes only
    /// re-transmit when this references a legitimate bridge of their cluster.
    pub reference: NodeId,
    /// The sender's estimate of the correct logical time at its MAC stamp.
    pub correct_time: f64,
    /// The sender's logical rate (informational; rates are hardware-relative).
    pub correct_rate: f64,
    /// The accused node.
    pub suspect: NodeId,
}

/// Frame body; the variant determines the `MsgType` tag.
#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Discovery {
        degree: u32,
        /// When set, announces the network-wide transition reference time
        /// (logical microseconds) that ends the discovery state.
        announce: Option<f64>,
    },
    ElectionReveal { degree: u32 },
    ElectionDeclare { degree: u32 },
    Connection(ConnectionBody),
    SlotClaim { slot: u8, ch_neighbor_count: u32 },
    SlotAck {
        /// Highest slot acknowledged this window (ties resolved upward by
        /// convention).
        acked_slot: u8,
        /// Claims heard this window, relayed for the partner CH.
        entries: Vec<ClaimEntry>,
    },
    Sync {
        /// Local center this time information originates from.
        reference: NodeId,
        /// Hops from the local center (0 at the LC itself).
        hops: u8,
        /// The sending CH's convergence slot, so its common nodes learn their
        /// wake window. `None` on bridge relays.
        ch_slot: Option<u8>,
    },
    Byz(ByzBody),
}

/// A radio frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub src: NodeId,
    /// Sender logical clock at the MAC timestamp (end of transmission),
    /// microseconds. Stamped by the engine for time-bearing bodies.
    pub logical_time: f64,
    /// Sender logical rate at the MAC timestamp.
    pub rate: f64,
    pub body: Body,
}

impl Frame {
    pub fn new(src: NodeId, body: Body) -> Self {
        Frame { src, logical_time: 0.0, rate: 1.0, body }
    }

    pub fn msg_type(&self) -> MsgType {
        match self.body {
            Body::Discovery { .. } => MsgType::Discovery,
            Body::ElectionReveal { .. } | Body::ElectionDeclare { .. } => MsgType::Election,
            Body::Connection(_) => MsgType::Connection,
            Body::SlotClaim { .. } => MsgType::SlotClaim,
            Body::SlotAck { .. } => MsgType::SlotAck,
            Body::Sync { .. } => MsgType::Sync,
            Body::Byz(_) => MsgType::ByzConsensus,
        }
    }

    /// Whether the engine stamps `logical_time`/`rate` at end of transmission.
    pub fn carries_time(&self) -> bool {
        matches!(
            self.body,
            Body::Discovery { .. } | Body::Sync { .. } | Body::Byz(_)
        )
    }
}
