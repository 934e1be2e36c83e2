//! Pure election and slot-assignment rules.
//!
//! All comparisons resolve ties by node address, so every outcome is a
//! deterministic function of the inputs.

use alloc::vec::Vec;

use crate::NodeId;

/// A contender identified by `(degree, address)`.
pub type Contender = (u32, NodeId);

fn beats(a: Contender, b: Contender) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
}

/// Cluster-head election: a node keeps its CH claim iff its degree is
/// strictly greatest among heard rivals, ties broken by greatest address.
/// No rivals means an isolated cluster of one: CH.
pub fn elect_ch(own: Contender, rivals: &[Contender]) -> bool {
    rivals.iter().all(|&r| beats(own, r))
}

/// The CH a common node associates with: the dominant heard declaration.
pub fn associate_ch(heard: &[Contender]) -> Option<NodeId> {
    heard.iter().copied().reduce(|a, b| if beats(b, a) { b } else { a }).map(|c| c.1)
}

/// Bridge candidacy: a common node adjacent to two or more cluster heads
/// bridges the pair with the two highest addresses.
pub fn select_ch_pair(ch_neighbors: &[NodeId]) -> Option<(NodeId, NodeId)> {
    if ch_neighbors.len() < 2 {
        return None;
    }
    let mut sorted: Vec<NodeId> = ch_neighbors.into();
    sorted.sort_unstable();
    let hi = sorted[sorted.len() - 1];
    let lo = sorted[sorted.len() - 2];
    Some((lo, hi))
}

/// Bridge-head election among bridges sharing a CH pair: highest degree,
/// ties by highest address. Empty candidate set means the clusters stay
/// disconnected.
pub fn elect_cbh(candidates: &[Contender]) -> Option<NodeId> {
    candidates.iter().copied().reduce(|a, b| if beats(b, a) { b } else { a }).map(|c| c.1)
}

/// Initial slot of a CH entering convergence: edge CHs (at most one CH
/// neighbor) transmit first.
pub fn initial_slot(ch_neighbor_count: u32) -> Option<u8> {
    if ch_neighbor_count <= 1 {
        Some(1)
    } else {
        None
    }
}

/// Slot assignment once neighbor claims are heard: one more than the first
/// confirmed neighbor slot, raised degree-wise when nothing was heard
/// (chain/ring rule), clamped to the configured maximum.
pub fn assign_slot(ch_neighbor_count: u32, received_claims: &[(NodeId, u8)], max_slots: u8) -> u8 {
    if ch_neighbor_count <= 1 {
        return 1;
    }
    match received_claims.iter().map(|&(_, s)| s).min() {
        Some(s) => s.saturating_add(1).min(max_slots),
        None => (ch_neighbor_count.min(max_slots as u32) as u8).max(1),
    }
}

/// A bridge acknowledges the higher of the claims it heard, by convention.
pub fn ack_slot(claims: &[u8]) -> Option<u8> {
    claims.iter().copied().max()
}

/// A local-center claim: CH-neighbor count, convergence slot, address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LcClaim {
    pub ch_neighbor_count: u32,
    pub slot: u8,
    pub addr: NodeId,
}

impl LcClaim {
    fn key(&self) -> (u32, u8, NodeId) {
        (self.ch_neighbor_count, self.slot, self.addr)
    }
}

/// Local-center election: a CH declares itself LC iff no heard peer claim
/// dominates it. Domination is lexicographic on (CH-neighbor count, slot,
/// address): most CH connections win, then the deeper slot, then the higher
/// identifier. Multiple LCs are permitted across the network.
pub fn elect_local_center(own: LcClaim, peers: &[LcClaim]) -> bool {
    peers.iter().all(|p| p.key() <= own.key())
}

/// Mirrored transmission slot for the synchronization state.
pub fn mirror_slot(slot: u8, max_slots: u8) -> u8 {
    debug_assert!(
        (1..=max_slots).contains(&slot),
        "slot {slot} outside [1, {max_slots}]"
    );
    max_slots - slot
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elect_ch_examples() {
        let a = NodeId(0xA);
        assert!(elect_ch((5, a), &[(3, NodeId(0xB)), (4, NodeId(0xC))]));
        // tie goes to the greater address
        assert!(!elect_ch((4, NodeId(0x02)), &[(4, NodeId(0x09))]));
        assert!(elect_ch((4, NodeId(0x09)), &[(4, NodeId(0x02))]));
        // isolated cluster of one
        assert!(elect_ch((0, a), &[]));
    }

    #[test]
    fn elect_ch_matches_bruteforce_argmax_once_rivals_known() {
        // on any rival set, the winner is exactly the (degree, addr) argmax
        let rivals: Vec<Contender> =
            alloc::vec![(3, NodeId(1)), (5, NodeId(2)), (5, NodeId(7)), (2, NodeId(9))];
        for own in [(6, NodeId(3)), (5, NodeId(8)), (5, NodeId(6)), (1, NodeId(12))] {
            let mut all = rivals.clone();
            all.push(own);
            let max = all.iter().copied().reduce(|a, b| if beats(b, a) { b } else { a }).unwrap();
            assert_eq!(elect_ch(own, &rivals), max == own);
        }
    }

    #[test]
    fn ch_pair_selection_takes_two_highest_addresses() {
        assert_eq!(select_ch_pair(&[NodeId(4)]), None);
        assert_eq!(select_ch_pair(&[NodeId(4), NodeId(9)]), Some((NodeId(4), NodeId(9))));
        assert_eq!(
            select_ch_pair(&[NodeId(4), NodeId(9), NodeId(2)]),
            Some((NodeId(4), NodeId(9)))
        );
    }

    #[test]
    fn elect_cbh_examples() {
        assert_eq!(elect_cbh(&[(3, NodeId(0x58)), (5, NodeId(0x59))]), Some(NodeId(0x59)));
        assert_eq!(elect_cbh(&[(4, NodeId(0x0A)), (4, NodeId(0x0B))]), Some(NodeId(0x0B)));
        assert_eq!(elect_cbh(&[]), None);
        // brute-force max over the candidate list
        let cands = alloc::vec![(2, NodeId(3)), (7, NodeId(1)), (7, NodeId(4)), (1, NodeId(9))];
        let max = cands.iter().copied().reduce(|a, b| if beats(b, a) { b } else { a }).unwrap();
        assert_eq!(elect_cbh(&cands), Some(max.1));
    }

    #[test]
    fn slot_rules() {
        // edge CH transmits first
        assert_eq!(assign_slot(1, &[], 10), 1);
        assert_eq!(assign_slot(0, &[], 10), 1);
        // interior CH locks one past the first heard claim
        assert_eq!(assign_slot(2, &[(NodeId(5), 2)], 10), 3);
        assert_eq!(assign_slot(2, &[(NodeId(5), 2), (NodeId(6), 4)], 10), 3);
        // silence falls back to the CH-neighbor count (ring rule)
        assert_eq!(assign_slot(2, &[], 10), 2);
        assert_eq!(assign_slot(3, &[], 10), 3);
        // clamped at the configured maximum
        assert_eq!(assign_slot(2, &[(NodeId(5), 10)], 10), 10);
        assert_eq!(assign_slot(30, &[], 10), 10);
        // the bridge acknowledges the higher claim
        assert_eq!(ack_slot(&[3, 4]), Some(4));
        assert_eq!(ack_slot(&[]), None);
    }

    #[test]
    fn mirror_slot_examples() {
        assert_eq!(mirror_slot(4, 10), 6);
        assert_eq!(mirror_slot(10, 10), 0);
        for s in 1..=10u8 {
            let m = mirror_slot(s, 10);
            assert_eq!(10 - m, s);
        }
    }

    #[test]
    fn local_center_examples() {
        // three clusters in a line: the middle CH dominates by CH count
        let ch1 = LcClaim { ch_neighbor_count: 1, slot: 1, addr: NodeId(101) };
        let ch2 = LcClaim { ch_neighbor_count: 2, slot: 2, addr: NodeId(102) };
        let ch3 = LcClaim { ch_neighbor_count: 1, slot: 1, addr: NodeId(103) };
        assert!(elect_local_center(ch2, &[ch1, ch3]));
        assert!(!elect_local_center(ch1, &[ch2]));
        assert!(!elect_local_center(ch3, &[ch2]));
        // single-cluster network: its CH is the sole LC
        assert!(elect_local_center(ch1, &[]));
        // chain centers: both centers hold the deepest slot; each only hears
        // the shallower flank (same-slot transmissions collide at the shared
        // bridge), so both become LCs
        let h2 = LcClaim { ch_neighbor_count: 2, slot: 2, addr: NodeId(104) };
        let h3 = LcClaim { ch_neighbor_count: 2, slot: 3, addr: NodeId(106) };
        let h4 = LcClaim { ch_neighbor_count: 2, slot: 3, addr: NodeId(108) };
        let h5 = LcClaim { ch_neighbor_count: 2, slot: 2, addr: NodeId(110) };
        assert!(elect_local_center(h3, &[h2]));
        assert!(elect_local_center(h4, &[h5]));
        // had the peer claim been heard, the higher address would dominate
        assert!(!elect_local_center(h3, &[h2, h4]));
    }
}
