//! Event-driven implementation of one C-sync node.
//!
//! The node is a pure transition system: every event produces outgoing
//! frames, timer requests and radio directives as data; the engine owns all
//! side effects. Timers are set against the node's own hardware clock, so
//! state transitions happen on the node's logical schedule, not simulator
//! truth.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::clock::{lc_referenced_rate, relative_rate, HwReading, LogicalClock, NeighborTracker};
use crate::engine::{
    ClusterReport, NodeBehavior, NodeEvent, RadioState, SampleInfo, StepOutput, TimerReq,
};
use crate::message::{Body, ByzBody, ClaimEntry, ConnectionBody, Frame};
use crate::protocol::election::{
    self, ack_slot, associate_ch, elect_cbh, elect_ch, elect_local_center, initial_slot,
    mirror_slot, LcClaim,
};
use crate::protocol::{norm_pair, Phase, ProtocolConfig, RoleKind};
use crate::resilience::{cb_token, quorum, verify_cb_token, ConsensusTally};
use crate::rng::{self, Stream};
use crate::NodeId;

/// Early-wake margin before a scheduled listen window, microseconds.
const WAKE_GUARD_US: f64 = 5_000.0;
/// Offsets within a slot window, as fractions of the slot duration.
///
/// Slot claims share one fixed offset: claims landing in the same window from
/// CHs two hops apart overlap at their shared bridge and cancel out, which is
/// what lets two equally deep chain centers both become local centers.
/// Synchronization transmissions instead stagger by address so that two
/// centers sharing a window stay separable at the bridge between them.
const CLAIM_OFF: f64 = 0.08;
const ACK_OFF: f64 = 0.45;
const SYNC_WATCH_OFF: f64 = 0.58;
/// One message transmission time: frame airtime plus worst-case CSMA backoff
/// (64 bytes at 250 kbps plus 8 slots of 320 us).
const TX_TIME_US: f64 = 2_048.0 + 2_560.0;
/// Minimum receiver-time baseline for a differential rate estimate.
const RATE_BASELINE_US: f64 = 200_000.0;

/// Node timers. Each carries enough context to be self-describing.
#[derive(Debug, Clone, PartialEq)]
pub enum CsyncTimer {
    Beacon,
    AnnounceRelay,
    Transition(Phase),
    RevealTx,
    DeclTx,
    ConnClaimTx,
    ChEchoTx,
    CbhDeclTx,
    ConvClaimTx { window: u8 },
    ConvFallback { window: u8 },
    AckTx { window: u8 },
    RoundStart { round: u32 },
    SyncWake { round: u32 },
    SyncTx { round: u32 },
    RelayTx { round: u32 },
    WindowSleep,
    IdleStart { round: u32 },
    ByzWatch { id: u32 },
    EpochEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum WatchStatus {
    Pending,
    Satisfied,
    Violated(f64),
}

#[derive(Debug, Clone)]
struct Watch {
    src: NodeId,
    round: u32,
    status: WatchStatus,
}

/// One C-sync node.
pub struct CsyncNode {
    addr: NodeId,
    cfg: ProtocolConfig,
    clock: LogicalClock,
    phase: Phase,
    role: RoleKind,
    is_lc: bool,
    lc_evaluated: bool,
    epoch: u32,

    // discovery
    tracker: NeighborTracker,
    neighbor_degree: BTreeMap<NodeId, u32>,
    disc_updates: u32,
    announced: bool,
    epoch_ref: Option<f64>,
    has_idled: bool,
    blacklist: BTreeSet<NodeId>,
    rng: ChaCha8Rng,

    // election
    heard_decls: BTreeMap<NodeId, u32>,
    declared: bool,
    assoc_ch: Option<NodeId>,

    // connection
    bridge_pair: Option<(NodeId, NodeId)>,
    registered_cbs: BTreeMap<(NodeId, NodeId), BTreeMap<NodeId, u32>>,
    cb_rivals: BTreeMap<NodeId, u32>,
    cluster_guards: BTreeSet<NodeId>,
    ch_partners: BTreeSet<NodeId>,
    pair_cbh: BTreeMap<(NodeId, NodeId), NodeId>,

    // convergence
    my_slot: Option<u8>,
    claim_window_scheduled: Option<u8>,
    heard_claims: BTreeMap<NodeId, ClaimEntry>,
    window_claims: Vec<ClaimEntry>,
    ack_scheduled_window: Option<u8>,
    ch_neighbor_count: u32,

    // synchronization
    consensus_count: u32,
    current_round: u32,
    lc_ref: Option<NodeId>,
    lc_hops: u8,
    cm_ch_slot: Option<u8>,
    /// Per immediate sender: last (sender logical, receiver hw) observation.
    sync_obs: BTreeMap<NodeId, (f64, f64)>,
    /// Pair CH slots a bridge has learned (claims or sync frames).
    known_ch_slots: BTreeMap<NodeId, u8>,
    round_sources: Vec<NodeId>,
    round_refs: Vec<(NodeId, f64)>,
    relay_scheduled: bool,
    pre_round: Option<(f64, f64, f64)>,

    // byzantine machinery
    tally: ConsensusTally,
    tally_round: u32,
    retransmitted: BTreeSet<NodeId>,
    byz_adopted: bool,
    watches: BTreeMap<u32, Watch>,
    next_watch: u32,
    miss_counts: BTreeMap<NodeId, u32>,
    pending_agreement: BTreeSet<NodeId>,
    warned_single_cluster: bool,

    /// Last completed clustering outcome, reported even while the node is
    /// re-discovering for the next epoch.
    rpt: ClusterReport,
}

type Out = StepOutput<CsyncTimer>;

impl CsyncNode {
    pub fn new(addr: NodeId, cfg: ProtocolConfig, seed: u64, initial_hw_us: f64) -> Self {
        CsyncNode {
            addr,
            cfg,
            clock: LogicalClock::new(initial_hw_us),
            phase: Phase::Discovery,
            role: RoleKind::Cm,
            is_lc: false,
            lc_evaluated: false,
            epoch: 0,
            tracker: NeighborTracker::default(),
            neighbor_degree: BTreeMap::new(),
            disc_updates: 0,
            announced: false,
            epoch_ref: None,
            has_idled: false,
            blacklist: BTreeSet::new(),
            rng: rng::derive(seed, Stream::Protocol(addr.0)),
            heard_decls: BTreeMap::new(),
            declared: false,
            assoc_ch: None,
            bridge_pair: None,
            registered_cbs: BTreeMap::new(),
            cb_rivals: BTreeMap::new(),
            cluster_guards: BTreeSet::new(),
            ch_partners: BTreeSet::new(),
            pair_cbh: BTreeMap::new(),
            my_slot: None,
            claim_window_scheduled: None,
            heard_claims: BTreeMap::new(),
            window_claims: Vec::new(),
            ack_scheduled_window: None,
            ch_neighbor_count: 0,
            consensus_count: 0,
            current_round: 0,
            lc_ref: None,
            lc_hops: 0,
            cm_ch_slot: None,
            sync_obs: BTreeMap::new(),
            known_ch_slots: BTreeMap::new(),
            round_sources: Vec::new(),
            round_refs: Vec::new(),
            relay_scheduled: false,
            pre_round: None,
            tally: ConsensusTally::new(),
            tally_round: 0,
            retransmitted: BTreeSet::new(),
            byz_adopted: false,
            watches: BTreeMap::new(),
            next_watch: 0,
            miss_counts: BTreeMap::new(),
            pending_agreement: BTreeSet::new(),
            warned_single_cluster: false,
            rpt: ClusterReport { role: RoleKind::Cm.as_str(), ch: None, slot: None, is_lc: false },
        }
    }

    pub fn addr(&self) -> NodeId {
        self.addr
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn role(&self) -> RoleKind {
        self.role
    }

    pub fn is_local_center(&self) -> bool {
        self.is_lc
    }

    pub fn slot(&self) -> Option<u8> {
        self.my_slot
    }

    pub fn degree(&self) -> u32 {
        self.neighbor_degree.len() as u32
    }

    pub fn consensus_count(&self) -> u32 {
        self.consensus_count
    }

    pub fn blacklist(&self) -> &BTreeSet<NodeId> {
        &self.blacklist
    }

    pub fn logical_now(&self, view: &HwReading) -> f64 {
        self.clock.now(view.comp_us)
    }

    fn now(&self, view: &HwReading) -> f64 {
        self.clock.now(view.comp_us)
    }

    fn at_logical(&self, view: &HwReading, target: f64, tag: CsyncTimer) -> TimerReq<CsyncTimer> {
        let l_now = self.now(view);
        let dl = (target - l_now).max(0.0);
        let comp_target = view.comp_us + dl / self.clock.rate();
        TimerReq { at_raw_ticks: view.raw_ticks_for_comp_us(comp_target), tag }
    }

    fn jitter(&mut self, span_us: f64) -> f64 {
        rng::uniform_range(&mut self.rng, 0.0, span_us)
    }

    // ---- epoch schedule (shared logical timeline anchored at the announce) ----

    fn conv_start(&self) -> f64 {
        self.epoch_ref.expect("schedule queried before epoch reference")
            + 4.0 * self.cfg.st_interval_us
    }

    fn conv_window_start(&self, window: u8) -> f64 {
        self.conv_start() + (window as f64 - 1.0) * self.cfg.slot_duration_us
    }

    fn round_start(&self, round: u32) -> f64 {
        self.conv_start()
            + self.cfg.convergence_len_us()
            + round as f64 * self.cfg.cycle_len_us()
    }

    fn sync_window_start(&self, round: u32, mirror: u8) -> f64 {
        self.round_start(round) + mirror as f64 * self.cfg.slot_duration_us
    }

    fn idle_start(&self, round: u32) -> f64 {
        self.round_start(round) + self.cfg.convergence_len_us()
    }

    fn current_conv_window(&self, l_now: f64) -> u8 {
        let w = ((l_now - self.conv_start()) / self.cfg.slot_duration_us) as i64 + 1;
        w.clamp(1, self.cfg.max_slots as i64) as u8
    }

    fn set_phase(&mut self, phase: Phase, out: &mut Out) {
        if self.phase != phase {
            self.phase = phase;
            out.notes.push(("state", String::from(phase.as_str())));
        }
    }

    fn set_role(&mut self, role: RoleKind, out: &mut Out) {
        if self.role != role {
            self.role = role;
            out.notes.push(("role", String::from(role.as_str())));
        }
        self.rpt.role = role.as_str();
        self.rpt.ch = self.assoc_ch;
        self.rpt.is_lc = self.is_lc;
    }

    fn n_i(&self) -> usize {
        self.neighbor_degree.keys().filter(|n| !self.blacklist.contains(n)).count()
    }

    /// Clock value untouched by anything adopted from `suspect` this round.
    fn reconstructed_now(&self, view: &HwReading, suspect: NodeId) -> f64 {
        if self.round_sources.contains(&suspect) {
            if let Some((l, hw, rate)) = self.pre_round {
                return l + (view.comp_us - hw) * rate;
            }
        }
        self.now(view)
    }

    // ---- boot and discovery ----

    fn on_boot(&mut self, view: &HwReading) -> Out {
        let mut out = Out::default();
        out.radio = Some(RadioState::IdleListen);
        out.notes.push(("state", String::from(self.phase.as_str())));
        let first = self.now(view) + self.jitter(self.cfg.disc_beacon_us) + 0.05 * self.cfg.disc_beacon_us;
        out.timers.push(self.at_logical(view, first, CsyncTimer::Beacon));
        out
    }

    fn enter_discovery(&mut self, view: &HwReading, out: &mut Out) {
        self.set_phase(Phase::Discovery, out);
        self.set_role(RoleKind::Cm, out);
        self.is_lc = false;
        self.lc_evaluated = false;
        self.epoch += 1;
        self.tracker.clear();
        self.neighbor_degree.clear();
        self.disc_updates = 0;
        self.announced = false;
        self.epoch_ref = None;
        self.heard_decls.clear();
        self.declared = false;
        self.assoc_ch = None;
        self.bridge_pair = None;
        self.registered_cbs.clear();
        self.cb_rivals.clear();
        self.cluster_guards.clear();
        self.ch_partners.clear();
        self.pair_cbh.clear();
        self.my_slot = None;
        self.claim_window_scheduled = None;
        self.heard_claims.clear();
        self.window_claims.clear();
        self.ack_scheduled_window = None;
        self.ch_neighbor_count = 0;
        self.consensus_count = 0;
        self.current_round = 0;
        self.cm_ch_slot = None;
        self.sync_obs.clear();
        self.known_ch_slots.clear();
        self.round_sources.clear();
        self.round_refs.clear();
        self.relay_scheduled = false;
        self.pre_round = None;
        self.tally.clear();
        self.retransmitted.clear();
        self.byz_adopted = false;
        self.watches.clear();
        self.miss_counts.clear();
        self.pending_agreement.clear();
        out.radio = Some(RadioState::IdleListen);
        let next = self.now(view) + 0.1 * self.cfg.disc_beacon_us + self.jitter(self.cfg.disc_beacon_us);
        out.timers.push(self.at_logical(view, next, CsyncTimer::Beacon));
    }

    fn on_beacon(&mut self, view: &HwReading) -> Out {
        let mut out = Out::default();
        if self.phase != Phase::Discovery {
            return out;
        }
        let hw = view.comp_us;
        // averaging serves the loose-sync gate; once a transition reference
        // is adopted the announced timeline is authoritative and further
        // averaging would mix dead timelines from the flood window
        if !self.announced {
            let samples = self.tracker.samples(hw, 3.0 * self.cfg.disc_beacon_us);
            if !samples.is_empty() {
                let upd = self.clock.average_update(hw, &samples);
                self.disc_updates += 1;
                let rate_gate = self.cfg.sync_threshold_us * 1e-6;
                if self.disc_updates >= self.cfg.min_disc_updates
                    && upd.max_abs_neighbor_offset <= self.cfg.sync_threshold_us
                    && upd.max_rel_rate_spread <= rate_gate
                {
                    // loosely synchronized: create the reference time that
                    // moves the neighborhood to election revelation
                    let t0 = self.now(view) + self.cfg.st_interval_us;
                    self.announced = true;
                    self.tracker.clear();
                    self.epoch_ref = Some(t0);
                    out.notes.push(("announce", format!("t0={t0:.0}")));
                    out.timers.push(self.at_logical(
                        view,
                        t0,
                        CsyncTimer::Transition(Phase::ElectionRevelation),
                    ));
                }
            }
        }
        out.msgs.push(Frame::new(
            self.addr,
            Body::Discovery { degree: self.degree(), announce: self.epoch_ref },
        ));
        let next = self.now(view) + self.cfg.disc_beacon_us * (0.75 + 0.5 * rng::uniform_f64(&mut self.rng));
        out.timers.push(self.at_logical(view, next, CsyncTimer::Beacon));
        out
    }

    fn on_discovery_frame(
        &mut self,
        view: &HwReading,
        frame: &Frame,
        degree: u32,
        announce: Option<f64>,
        out: &mut Out,
    ) {
        if self.phase != Phase::Discovery {
            return;
        }
        let hw = view.comp_us;
        let newly = !self.neighbor_degree.contains_key(&frame.src);
        self.neighbor_degree.insert(frame.src, degree);
        if announce.is_some() && !self.announced {
            // the sender jumped onto the announced timeline; differencing
            // across that jump would corrupt the rate estimate
            self.tracker.reset(frame.src);
        }
        self.tracker.observe(frame.src, frame.logical_time, frame.rate, hw, RATE_BASELINE_US);
        if newly {
            out.notes.push(("neighbor", format!("src={};degree={}", frame.src, self.degree())));
        }
        if let (Some(t0), false) = (announce, self.announced) {
            // jump to the announcing neighbor's timeline and adopt its
            // transition reference; pre-jump observations live on dead
            // timelines and must not feed later averaging
            self.clock.jump_to(hw, frame.logical_time);
            self.tracker.clear();
            self.announced = true;
            self.epoch_ref = Some(t0);
            out.notes.push(("announce_adopt", format!("src={};t0={t0:.0}", frame.src)));
            let target = t0.max(self.now(view));
            out.timers.push(self.at_logical(
                view,
                target,
                CsyncTimer::Transition(Phase::ElectionRevelation),
            ));
            let relay_at = self.now(view) + 20_000.0 + self.jitter(100_000.0);
            out.timers.push(self.at_logical(view, relay_at, CsyncTimer::AnnounceRelay));
        }
    }

    fn on_announce_relay(&mut self, _view: &HwReading) -> Out {
        let mut out = Out::default();
        if self.phase == Phase::Discovery && self.announced {
            out.msgs.push(Frame::new(
                self.addr,
                Body::Discovery { degree: self.degree(), announce: self.epoch_ref },
            ));
        }
        out
    }

    // ---- clustering state transitions ----

    fn on_transition(&mut self, view: &HwReading, phase: Phase) -> Out {
        let mut out = Out::default();
        let e0 = match self.epoch_ref {
            Some(e) => e,
            None => return out,
        };
        let st = self.cfg.st_interval_us;
        match phase {
            Phase::ElectionRevelation => {
                if self.phase != Phase::Discovery {
                    return out;
                }
                self.set_phase(Phase::ElectionRevelation, &mut out);
                out.radio = Some(RadioState::IdleListen);
                let tx = e0 + self.jitter(0.4 * st);
                out.timers.push(self.at_logical(view, tx, CsyncTimer::RevealTx));
                out.timers.push(self.at_logical(
                    view,
                    e0 + st,
                    CsyncTimer::Transition(Phase::ElectionDeclaration),
                ));
            }
            Phase::ElectionDeclaration => {
                self.set_phase(Phase::ElectionDeclaration, &mut out);
                let delay = decl_stagger(self.degree(), self.addr, 0.85 * st);
                out.timers.push(self.at_logical(view, e0 + st + delay, CsyncTimer::DeclTx));
                out.timers.push(self.at_logical(
                    view,
                    e0 + 2.0 * st,
                    CsyncTimer::Transition(Phase::ConnectionRevelation),
                ));
            }
            Phase::ConnectionRevelation => {
                self.finalize_roles(&mut out);
                self.set_phase(Phase::ConnectionRevelation, &mut out);
                if self.role == RoleKind::Cb {
                    let tx = e0 + 2.0 * st + self.jitter(0.4 * st);
                    out.timers.push(self.at_logical(view, tx, CsyncTimer::ConnClaimTx));
                }
                out.timers.push(self.at_logical(
                    view,
                    e0 + 3.0 * st,
                    CsyncTimer::Transition(Phase::ConnectionDeclaration),
                ));
            }
            Phase::ConnectionDeclaration => {
                self.set_phase(Phase::ConnectionDeclaration, &mut out);
                if self.role == RoleKind::Ch {
                    let tx = e0 + 3.0 * st + self.jitter(0.2 * st);
                    out.timers.push(self.at_logical(view, tx, CsyncTimer::ChEchoTx));
                }
                if self.role == RoleKind::Cb {
                    let delay = decl_stagger(self.degree(), self.addr, 0.4 * st);
                    out.timers.push(self.at_logical(
                        view,
                        e0 + 3.0 * st + 0.5 * st + delay,
                        CsyncTimer::CbhDeclTx,
                    ));
                }
                out.timers.push(self.at_logical(
                    view,
                    e0 + 4.0 * st,
                    CsyncTimer::Transition(Phase::ConsensusConvergence),
                ));
            }
            Phase::ConsensusConvergence => {
                self.enter_convergence(view, &mut out);
            }
            _ => {}
        }
        out
    }

    fn finalize_roles(&mut self, out: &mut Out) {
        let rivals: Vec<(u32, NodeId)> =
            self.heard_decls.iter().map(|(&a, &d)| (d, a)).collect();
        if elect_ch((self.degree(), self.addr), &rivals) {
            self.set_role(RoleKind::Ch, out);
            self.assoc_ch = None;
        } else {
            self.assoc_ch = associate_ch(&rivals);
            // bridge candidacy: two or more distinct CH neighbors
            let chs: Vec<NodeId> = self.heard_decls.keys().copied().collect();
            if let Some(pair) = election::select_ch_pair(&chs) {
                self.bridge_pair = Some(pair);
                self.set_role(RoleKind::Cb, out);
                out.notes.push(("cb_candidate", format!("pair={},{}", pair.0, pair.1)));
            } else {
                self.set_role(RoleKind::Cm, out);
            }
            self.rpt.ch = self.assoc_ch;
            out.notes.push((
                "assoc",
                format!(
                    "ch={}",
                    self.assoc_ch.map(|c| format!("{c}")).unwrap_or_else(|| String::from("-"))
                ),
            ));
        }
    }

    fn on_decl_tx(&mut self, _view: &HwReading) -> Out {
        let mut out = Out::default();
        if self.phase != Phase::ElectionDeclaration {
            return out;
        }
        let rivals: Vec<(u32, NodeId)> =
            self.heard_decls.iter().map(|(&a, &d)| (d, a)).collect();
        if elect_ch((self.degree(), self.addr), &rivals) {
            self.declared = true;
            out.msgs.push(Frame::new(self.addr, Body::ElectionDeclare { degree: self.degree() }));
            out.notes.push(("decl", format!("degree={}", self.degree())));
        }
        out
    }

    fn on_conn_claim_tx(&mut self, _view: &HwReading) -> Out {
        let mut out = Out::default();
        if self.phase != Phase::ConnectionRevelation || self.role != RoleKind::Cb {
            return out;
        }
        let pair = self.bridge_pair.expect("bridge without pair");
        out.msgs.push(Frame::new(
            self.addr,
            Body::Connection(ConnectionBody::BridgeClaim {
                pair,
                token: cb_token(pair, self.addr),
                degree: self.degree(),
            }),
        ));
        out
    }

    fn on_ch_echo_tx(&mut self, _view: &HwReading) -> Out {
        let mut out = Out::default();
        if self.phase != Phase::ConnectionDeclaration || self.role != RoleKind::Ch {
            return out;
        }
        let mut candidates = Vec::new();
        for (&pair, cbs) in &self.registered_cbs {
            for (&cb, &deg) in cbs {
                candidates.push((cb, deg, pair));
            }
        }
        out.msgs.push(Frame::new(self.addr, Body::Connection(ConnectionBody::ChEcho { candidates })));
        out
    }

    fn on_cbh_decl_tx(&mut self, _view: &HwReading) -> Out {
        let mut out = Out::default();
        if self.phase != Phase::ConnectionDeclaration || self.role != RoleKind::Cb {
            return out;
        }
        let pair = self.bridge_pair.expect("bridge without pair");
        let mut candidates: Vec<(u32, NodeId)> =
            self.cb_rivals.iter().map(|(&a, &d)| (d, a)).collect();
        candidates.push((self.degree(), self.addr));
        if elect_cbh(&candidates) == Some(self.addr) {
            self.set_role(RoleKind::Cbh, &mut out);
            self.pair_cbh.insert(pair, self.addr);
            out.msgs.push(Frame::new(
                self.addr,
                Body::Connection(ConnectionBody::BridgeHeadDeclare { pair }),
            ));
            out.notes.push(("cbh", format!("pair={},{}", pair.0, pair.1)));
        }
        out
    }

    // ---- consensus convergence ----

    fn enter_convergence(&mut self, view: &HwReading, out: &mut Out) {
        self.set_phase(Phase::ConsensusConvergence, out);
        self.consensus_count = 0;
        if self.role == RoleKind::Ch {
            self.ch_partners = self
                .registered_cbs
                .keys()
                .map(|&(a, b)| if a == self.addr { b } else { a })
                .filter(|&p| p != self.addr)
                .collect();
            self.ch_neighbor_count = self.ch_partners.len() as u32;
            // resolve bridge heads for pairs whose declaration was missed
            for (&pair, cbs) in &self.registered_cbs {
                let cands: Vec<(u32, NodeId)> = cbs.iter().map(|(&a, &d)| (d, a)).collect();
                if let Some(head) = elect_cbh(&cands) {
                    self.pair_cbh.entry(pair).or_insert(head);
                }
            }
            if self.ch_neighbor_count == 0 && !self.warned_single_cluster {
                self.warned_single_cluster = true;
                out.notes.push((
                    "single_cluster_warning",
                    String::from("no bridges: byzantine fault handling inactive"),
                ));
            }
            if let Some(slot) = initial_slot(self.ch_neighbor_count) {
                self.lock_slot(view, slot, slot, out);
            } else {
                let fb = (self.ch_neighbor_count.min(self.cfg.max_slots as u32) as u8).max(1);
                out.timers.push(self.at_logical(
                    view,
                    self.conv_window_start(fb) + self.cfg.slot_duration_us,
                    CsyncTimer::ConvFallback { window: fb },
                ));
            }
        }
        // everyone listens through convergence: bridges relay claims, common
        // nodes wait for their head's slot to be decided
        out.radio = Some(RadioState::IdleListen);
        out.timers.push(self.at_logical(view, self.round_start(0), CsyncTimer::RoundStart { round: 0 }));
    }

    fn lock_slot(&mut self, view: &HwReading, slot: u8, announce_window: u8, out: &mut Out) {
        if self.my_slot.is_some() {
            return;
        }
        let slot = slot.min(self.cfg.max_slots);
        self.my_slot = Some(slot);
        self.rpt.slot = Some(slot);
        out.notes.push(("slot_locked", format!("slot={slot}")));
        let w = announce_window.max(slot);
        if w <= self.cfg.max_slots {
            let at = self.conv_window_start(w) + CLAIM_OFF * self.cfg.slot_duration_us;
            if self.claim_window_scheduled.is_none() {
                self.claim_window_scheduled = Some(w);
                out.timers.push(self.at_logical(view, at, CsyncTimer::ConvClaimTx { window: w }));
            }
        }
    }

    fn on_conv_claim_tx(&mut self, _view: &HwReading, _window: u8) -> Out {
        let mut out = Out::default();
        if self.phase != Phase::ConsensusConvergence || self.role != RoleKind::Ch {
            return out;
        }
        if let Some(slot) = self.my_slot {
            out.msgs.push(Frame::new(
                self.addr,
                Body::SlotClaim { slot, ch_neighbor_count: self.ch_neighbor_count },
            ));
        }
        out
    }

    fn on_conv_fallback(&mut self, view: &HwReading, window: u8) -> Out {
        let mut out = Out::default();
        if self.phase == Phase::ConsensusConvergence && self.role == RoleKind::Ch && self.my_slot.is_none() {
            // silence through the degree-indexed window: claim it (ring rule)
            self.lock_slot(view, window, window.saturating_add(1), &mut out);
            out.notes.push(("slot_fallback", format!("slot={window}")));
        }
        out
    }

    fn on_slot_claim(&mut self, view: &HwReading, frame: &Frame, slot: u8, chc: u32, out: &mut Out) {
        if self.phase != Phase::ConsensusConvergence {
            return;
        }
        let entry = ClaimEntry { ch: frame.src, slot, ch_neighbor_count: chc };
        match self.role {
            RoleKind::Cb | RoleKind::Cbh => {
                let pair = self.bridge_pair.expect("bridge without pair");
                if frame.src != pair.0 && frame.src != pair.1 {
                    return;
                }
                self.known_ch_slots.insert(frame.src, slot);
                self.window_claims.push(entry);
                // the pair's bridge head acknowledges once per window
                if self.pair_cbh.get(&pair) == Some(&self.addr) || self.role == RoleKind::Cbh {
                    let l_now = self.now(view);
                    let w = self.current_conv_window(l_now);
                    if self.ack_scheduled_window != Some(w) {
                        self.ack_scheduled_window = Some(w);
                        let at = self.conv_window_start(w) + ACK_OFF * self.cfg.slot_duration_us + self.jitter(0.04 * self.cfg.slot_duration_us);
                        out.timers.push(self.at_logical(view, at, CsyncTimer::AckTx { window: w }));
                    }
                }
            }
            RoleKind::Ch => {
                // direct CH adjacency is rare but legal
                self.register_peer_claim(view, entry, out);
            }
            RoleKind::Cm => {}
        }
    }

    fn on_ack_tx(&mut self, _view: &HwReading, _window: u8) -> Out {
        let mut out = Out::default();
        if self.phase != Phase::ConsensusConvergence || !self.role.is_bridge() {
            return out;
        }
        self.ack_scheduled_window = None;
        if self.window_claims.is_empty() {
            return out;
        }
        let slots: Vec<u8> = self.window_claims.iter().map(|c| c.slot).collect();
        let acked = ack_slot(&slots).unwrap();
        out.msgs.push(Frame::new(
            self.addr,
            Body::SlotAck { acked_slot: acked, entries: core::mem::take(&mut self.window_claims) },
        ));
        out
    }

    fn on_slot_ack(&mut self, view: &HwReading, entries: &[ClaimEntry], out: &mut Out) {
        if self.phase != Phase::ConsensusConvergence || self.role != RoleKind::Ch {
            return;
        }
        for e in entries {
            if e.ch == self.addr {
                continue;
            }
            self.register_peer_claim(view, *e, out);
        }
    }

    fn register_peer_claim(&mut self, view: &HwReading, entry: ClaimEntry, out: &mut Out) {
        self.heard_claims.insert(entry.ch, entry);
        if self.my_slot.is_none() {
            let l_now = self.now(view);
            let w_now = self.current_conv_window(l_now);
            let claims: Vec<(NodeId, u8)> =
                self.heard_claims.iter().map(|(&a, e)| (a, e.slot)).collect();
            let slot = election::assign_slot(self.ch_neighbor_count, &claims, self.cfg.max_slots);
            self.lock_slot(view, slot, w_now.saturating_add(1).max(slot), out);
        }
    }

    // ---- consensus synchronization ----

    fn evaluate_local_center(&mut self, out: &mut Out) {
        if self.lc_evaluated || self.role != RoleKind::Ch {
            return;
        }
        self.lc_evaluated = true;
        let slot = self.my_slot.unwrap_or(1);
        let own = LcClaim { ch_neighbor_count: self.ch_neighbor_count, slot, addr: self.addr };
        let peers: Vec<LcClaim> = self
            .heard_claims
            .values()
            .map(|e| LcClaim { ch_neighbor_count: e.ch_neighbor_count, slot: e.slot, addr: e.ch })
            .collect();
        if elect_local_center(own, &peers) {
            self.is_lc = true;
            self.rpt.is_lc = true;
            self.lc_ref = Some(self.addr);
            self.lc_hops = 0;
            out.notes.push(("lc", format!("slot={slot}")));
        }
    }

    /// A bridge's pair ordered as (upstream, downstream): the upstream CH
    /// holds the deeper slot (closer to the local center) and transmits in the
    /// earlier mirrored window.
    fn bridge_orientation(&self) -> Option<(NodeId, u8, NodeId, u8)> {
        let pair = self.bridge_pair?;
        let s0 = self.known_ch_slots.get(&pair.0).copied()?;
        let s1 = self.known_ch_slots.get(&pair.1).copied()?;
        let (up, su, dn, sd) = if (s0, pair.0) >= (s1, pair.1) {
            (pair.0, s0, pair.1, s1)
        } else {
            (pair.1, s1, pair.0, s0)
        };
        Some((up, su, dn, sd))
    }

    fn on_round_start(&mut self, view: &HwReading, round: u32) -> Out {
        let mut out = Out::default();
        if !matches!(
            self.phase,
            Phase::ConsensusConvergence | Phase::ConsensusSynchronization | Phase::Idle
        ) {
            return out;
        }
        self.evaluate_local_center(&mut out);
        if !self.pending_agreement.is_empty() {
            let suspects: Vec<String> =
                self.pending_agreement.iter().map(|s| format!("{s}")).collect();
            out.notes.push((
                "assumption",
                format!("byzantine quorum unreachable for suspect(s) {}", suspects.join("/")),
            ));
            self.pending_agreement.clear();
        }
        self.set_phase(Phase::ConsensusSynchronization, &mut out);
        self.current_round = round;
        self.consensus_count = round + 1;
        self.round_sources.clear();
        self.round_refs.clear();
        self.relay_scheduled = false;
        self.pre_round = None;
        self.byz_adopted = false;
        self.retransmitted.clear();
        self.tally.clear();
        self.tally_round = round;

        let slot_us = self.cfg.slot_duration_us;
        match self.role {
            RoleKind::Ch => {
                let m = mirror_slot(self.my_slot.unwrap_or(1), self.cfg.max_slots);
                let w = self.sync_window_start(round, m);
                let tx = w + sync_subslot(self.addr) * slot_us;
                if self.is_lc {
                    out.timers.push(self.at_logical(view, tx, CsyncTimer::SyncTx { round }));
                } else {
                    out.timers.push(self.at_logical(view, w - WAKE_GUARD_US, CsyncTimer::SyncWake { round }));
                    out.timers.push(self.at_logical(view, tx, CsyncTimer::SyncTx { round }));
                }
                out.timers.push(self.at_logical(view, w + slot_us, CsyncTimer::WindowSleep));
                out.radio = Some(RadioState::Sleep);
            }
            RoleKind::Cb | RoleKind::Cbh => {
                if let Some((up, su, dn, sd)) = self.bridge_orientation() {
                    let mu = mirror_slot(su, self.cfg.max_slots);
                    let md = mirror_slot(sd, self.cfg.max_slots);
                    let wu = self.sync_window_start(round, mu);
                    out.timers.push(self.at_logical(view, wu - WAKE_GUARD_US, CsyncTimer::SyncWake { round }));
                    // monitor the upstream CH's scheduled synchronization
                    self.arm_watch(view, up, round, wu + SYNC_WATCH_OFF * slot_us, &mut out);
                    if md != mu {
                        let wd = self.sync_window_start(round, md);
                        let pair = self.bridge_pair.unwrap();
                        let head = self.pair_cbh.get(&pair).copied();
                        if let Some(h) = head.filter(|&h| h != self.addr) {
                            // sibling bridges monitor the head's relay
                            self.arm_watch(view, h, round, wd + relay_subslot(h) * slot_us, &mut out);
                        }
                        self.arm_watch(view, dn, round, wd + SYNC_WATCH_OFF * slot_us, &mut out);
                        out.timers.push(self.at_logical(view, wd + slot_us, CsyncTimer::WindowSleep));
                    } else {
                        // both heads share the window (two local centers)
                        out.timers.push(self.at_logical(view, wu + slot_us, CsyncTimer::WindowSleep));
                    }
                    out.radio = Some(RadioState::Sleep);
                } else {
                    // pair slots unknown yet: listen through the whole phase
                    out.radio = Some(RadioState::IdleListen);
                }
            }
            RoleKind::Cm => {
                if self.cfg.single_cluster_consensus {
                    // opt-in for bridge-less networks: common nodes stay awake
                    // and watch their head so consensus floods can still form
                    if let (Some(ch), Some(s)) = (self.assoc_ch, self.cm_ch_slot) {
                        let m = mirror_slot(s, self.cfg.max_slots);
                        let w = self.sync_window_start(round, m);
                        self.arm_watch(view, ch, round, w + SYNC_WATCH_OFF * slot_us, &mut out);
                    }
                    out.radio = Some(RadioState::IdleListen);
                } else if let Some(s) = self.cm_ch_slot {
                    let m = mirror_slot(s, self.cfg.max_slots);
                    let w = self.sync_window_start(round, m);
                    out.timers.push(self.at_logical(view, w - WAKE_GUARD_US, CsyncTimer::SyncWake { round }));
                    out.timers.push(self.at_logical(view, w + slot_us, CsyncTimer::WindowSleep));
                    out.radio = Some(RadioState::Sleep);
                } else {
                    // slot unknown until the first synchronization reception
                    out.radio = Some(RadioState::IdleListen);
                }
            }
        }

        out.timers.push(self.at_logical(view, self.idle_start(round), CsyncTimer::IdleStart { round }));
        let next = round + 1;
        if next < self.cfg.max_count {
            out.timers.push(self.at_logical(view, self.round_start(next), CsyncTimer::RoundStart { round: next }));
        } else {
            out.timers.push(self.at_logical(view, self.round_start(self.cfg.max_count), CsyncTimer::EpochEnd));
        }
        out
    }

    fn arm_watch(&mut self, view: &HwReading, src: NodeId, round: u32, expected_tx: f64, out: &mut Out) {
        if self.blacklist.contains(&src) {
            // a blacklisted node's frames are ignored, so its slots are
            // serviced by consensus floods instead of watches
            return;
        }
        let id = self.next_watch;
        self.next_watch += 1;
        self.watches.insert(id, Watch { src, round, status: WatchStatus::Pending });
        out.timers.push(self.at_logical(view, expected_tx + 2.0 * TX_TIME_US, CsyncTimer::ByzWatch { id }));
    }

    fn on_sync_frame(&mut self, view: &HwReading, frame: &Frame, reference: NodeId, hops: u8, ch_slot: Option<u8>, out: &mut Out) {
        let hw = view.comp_us;
        // late joiner: adopt the nearest cluster's time and wait for the next
        // discovery phase to take a role
        if self.phase == Phase::Discovery && !self.announced {
            self.clock.jump_to(hw, frame.logical_time);
            if ch_slot.is_some() && self.assoc_ch.is_none() {
                self.assoc_ch = Some(frame.src);
                self.lc_ref = Some(reference);
                self.lc_hops = hops + 1;
                out.notes.push(("late_join", format!("ch={}", frame.src)));
            }
            return;
        }
        if self.phase != Phase::ConsensusSynchronization {
            return;
        }

        // byzantine monitoring happens against the pre-adoption clock
        let threshold = self.cfg.byz_threshold_us;
        let own_now = self.reconstructed_now(view, frame.src);
        let err = frame.logical_time - own_now;
        for w in self.watches.values_mut() {
            if w.src == frame.src && w.round == self.current_round && w.status == WatchStatus::Pending {
                w.status = if libm::fabs(err) <= threshold {
                    WatchStatus::Satisfied
                } else {
                    WatchStatus::Violated(err)
                };
            }
        }

        if let Some(s) = ch_slot {
            self.known_ch_slots.insert(frame.src, s);
            if Some(frame.src) == self.assoc_ch {
                self.cm_ch_slot = Some(s);
                if self.role == RoleKind::Cm {
                    self.rpt.slot = Some(s);
                }
            }
        }

        // a bridge between two local centers sharing a slot synchronizes to
        // the one with the higher address only
        if self.role.is_bridge() {
            if let Some((up, su, dn, sd)) = self.bridge_orientation() {
                if su == sd && (frame.src == up || frame.src == dn) && frame.src != up.max(dn) {
                    return;
                }
            }
        }

        if self.pre_round.is_none() {
            self.pre_round = Some((self.now(view), hw, self.clock.rate()));
        }
        self.round_sources.push(frame.src);

        // rate: differential estimate against this sender, referenced to the
        // local center chain
        let mut new_rate = None;
        if let Some(&prev) = self.sync_obs.get(&frame.src) {
            if hw - prev.1 >= RATE_BASELINE_US {
                if let Ok(l_rs) = relative_rate(prev, (frame.logical_time, hw)) {
                    // a window straddling the sender's correction jump (e.g.
                    // following a consensus recovery) is unusable
                    if libm::fabs(l_rs - frame.rate) <= crate::clock::RATE_ESTIMATE_GUARD {
                        if let Ok(ratio) = lc_referenced_rate(l_rs, self.clock.rate()) {
                            new_rate = Some(self.clock.rate() * ratio);
                        }
                    }
                }
            }
        }
        self.sync_obs.insert(frame.src, (frame.logical_time, hw));

        let other_ref_adopted =
            !self.round_refs.is_empty() && self.round_refs.iter().all(|&(r, _)| r != reference);
        if other_ref_adopted {
            // a second local center's wave reached this node in the same
            // round: average the two time sources
            let target = (self.now(view) + frame.logical_time) / 2.0;
            self.clock.jump_to(hw, target);
            if let Some(r) = new_rate {
                let avg = (self.clock.rate() + r) / 2.0;
                let _ = self.clock.set_rate(hw, avg);
            }
        } else if self.is_lc && reference != self.addr {
            // local centers average with peer centers rather than follow them
            let target = (self.now(view) + frame.logical_time) / 2.0;
            self.clock.jump_to(hw, target);
            if let Some(r) = new_rate {
                let avg = (self.clock.rate() + r) / 2.0;
                let _ = self.clock.set_rate(hw, avg);
            }
        } else {
            if let Some(r) = new_rate {
                let _ = self.clock.set_rate(hw, r);
            }
            self.clock.jump_to(hw, frame.logical_time);
        }
        self.round_refs.push((reference, frame.logical_time));
        if !self.is_lc {
            self.lc_ref = Some(reference);
            self.lc_hops = hops.saturating_add(1);
        }
        out.notes.push(("sync_update", format!("src={};ref={reference};hops={}", frame.src, hops.saturating_add(1))));

        // bridge heads relay toward the downstream CH in its window
        if self.role.is_bridge() && !self.relay_scheduled {
            if let Some((up, su, _dn, sd)) = self.bridge_orientation() {
                if frame.src == up {
                    if su == sd {
                        // both heads share the slot: nothing to relay back
                        out.notes.push(("relay_skipped", String::from("pair shares a slot")));
                    } else {
                        let pair = self.bridge_pair.unwrap();
                        if self.pair_cbh.get(&pair) == Some(&self.addr) {
                            let md = mirror_slot(sd, self.cfg.max_slots);
                            let at = self.sync_window_start(self.current_round, md)
                                + relay_subslot(self.addr) * self.cfg.slot_duration_us;
                            self.relay_scheduled = true;
                            out.timers.push(self.at_logical(view, at, CsyncTimer::RelayTx { round: self.current_round }));
                        }
                    }
                }
            }
        }
    }

    fn on_sync_tx(&mut self, _view: &HwReading, round: u32) -> Out {
        let mut out = Out::default();
        if self.phase != Phase::ConsensusSynchronization
            || round != self.current_round
            || self.role != RoleKind::Ch
        {
            return out;
        }
        let reference = if self.is_lc { self.addr } else { self.lc_ref.unwrap_or(self.addr) };
        let hops = if self.is_lc { 0 } else { self.lc_hops };
        out.msgs.push(Frame::new(
            self.addr,
            Body::Sync { reference, hops, ch_slot: self.my_slot },
        ));
        out
    }

    fn on_relay_tx(&mut self, _view: &HwReading, round: u32) -> Out {
        let mut out = Out::default();
        if self.phase != Phase::ConsensusSynchronization || round != self.current_round {
            return out;
        }
        let reference = self.lc_ref.unwrap_or(self.addr);
        out.msgs.push(Frame::new(
            self.addr,
            Body::Sync { reference, hops: self.lc_hops, ch_slot: None },
        ));
        out
    }

    fn on_byz_watch(&mut self, view: &HwReading, id: u32) -> Out {
        let mut out = Out::default();
        let Some(watch) = self.watches.remove(&id) else { return out };
        if watch.round != self.current_round || self.phase != Phase::ConsensusSynchronization {
            return out;
        }
        match watch.status {
            WatchStatus::Satisfied => {
                self.miss_counts.insert(watch.src, 0);
            }
            WatchStatus::Pending | WatchStatus::Violated(_) => {
                let count = self.miss_counts.entry(watch.src).or_insert(0);
                *count += 1;
                if *count >= self.cfg.byz_consecutive {
                    *count = 0;
                    let correct_time = self.reconstructed_now(view, watch.src);
                    let body = ByzBody {
                        initiator: self.addr,
                        reference: self.addr,
                        correct_time,
                        correct_rate: self.clock.rate(),
                        suspect: watch.src,
                    };
                    let detail = match watch.status {
                        WatchStatus::Violated(err) => format!("suspect={};err_us={err:.1}", watch.src),
                        _ => format!("suspect={};missed_broadcast", watch.src),
                    };
                    out.notes.push(("byz_detect", detail));
                    self.tally.record(self.addr, &body, self.cfg.byz_threshold_us);
                    self.retransmitted.insert(watch.src);
                    self.pending_agreement.insert(watch.src);
                    out.msgs.push(Frame::new(self.addr, Body::Byz(body)));
                }
            }
        }
        out
    }

    fn on_byz_frame(&mut self, view: &HwReading, frame: &Frame, body: &ByzBody, out: &mut Out) {
        if self.phase != Phase::ConsensusSynchronization {
            return;
        }
        // correct nodes only re-transmit consensus messages backed by a
        // legitimate bridge of their cluster; a faulty common node's message
        // dies here
        let reference_ok = self.cluster_guards.contains(&body.reference)
            || (self.cfg.single_cluster_consensus && self.cluster_guards.is_empty());
        if !reference_ok {
            out.notes.push(("byz_ignored", format!("reference={}", body.reference)));
            return;
        }
        let own = self.reconstructed_now(view, body.suspect);
        let consistent = libm::fabs(body.correct_time - own) <= self.cfg.byz_threshold_us;
        let count = self.tally.record(frame.src, body, self.cfg.byz_threshold_us);

        if consistent && !self.retransmitted.contains(&body.suspect) {
            self.retransmitted.insert(body.suspect);
            let fresh = ByzBody {
                initiator: body.initiator,
                reference: body.reference,
                correct_time: own,
                correct_rate: self.clock.rate(),
                suspect: body.suspect,
            };
            out.msgs.push(Frame::new(self.addr, Body::Byz(fresh)));
        }

        let needed = quorum(self.n_i());
        if count >= needed && !self.byz_adopted {
            if let Some(group) = self.tally.agreement(needed) {
                let adopt = group.latest;
                self.byz_adopted = true;
                self.clock.jump_to(view.comp_us, adopt.correct_time);
                let newly = self.blacklist.insert(adopt.suspect);
                self.pending_agreement.remove(&adopt.suspect);
                out.notes.push((
                    "byz_agree",
                    format!("suspect={};senders={}", adopt.suspect, group.senders.len()),
                ));
                if newly {
                    out.notes.push(("blacklist", format!("node={}", adopt.suspect)));
                }
            }
        }
    }

    fn on_idle_start(&mut self, _view: &HwReading, round: u32) -> Out {
        let mut out = Out::default();
        if round != self.current_round || self.phase != Phase::ConsensusSynchronization {
            return out;
        }
        self.set_phase(Phase::Idle, &mut out);
        self.has_idled = true;
        out.radio = Some(RadioState::Sleep);
        out
    }
}

/// Address-staggered transmit offset within a synchronization window,
/// as a fraction of the slot. Keeps same-window senders separable in time.
fn sync_subslot(addr: NodeId) -> f64 {
    0.35 + (addr.0 % 8) as f64 * 0.025
}

/// Bridge relay offset within the downstream window; precedes every
/// synchronization sub-slot.
fn relay_subslot(addr: NodeId) -> f64 {
    0.12 + (addr.0 % 8) as f64 * 0.01
}

/// Declaration stagger over a time budget: higher degree transmits earlier,
/// ties broken by address (higher first). Keeps contenders' claims from
/// overlapping so the cancellation rule sees them in dominance order.
fn decl_stagger(degree: u32, addr: NodeId, span_us: f64) -> f64 {
    let deg_rank = 16u32.saturating_sub(degree.min(16)) as f64;
    let addr_rank = (15 - (addr.0 % 16)) as f64;
    span_us * (deg_rank * 16.0 + addr_rank) / 272.0
}

impl NodeBehavior for CsyncNode {
    type Timer = CsyncTimer;

    fn on_event(&mut self, view: &HwReading, ev: NodeEvent<'_, CsyncTimer>) -> Out {
        match ev {
            NodeEvent::Boot => self.on_boot(view),
            NodeEvent::Timer(t) => match t {
                CsyncTimer::Beacon => self.on_beacon(view),
                CsyncTimer::AnnounceRelay => self.on_announce_relay(view),
                CsyncTimer::Transition(p) => self.on_transition(view, p),
                CsyncTimer::RevealTx => {
                    let mut out = Out::default();
                    if self.phase == Phase::ElectionRevelation {
                        out.msgs.push(Frame::new(self.addr, Body::ElectionReveal { degree: self.degree() }));
                    }
                    out
                }
                CsyncTimer::DeclTx => self.on_decl_tx(view),
                CsyncTimer::ConnClaimTx => self.on_conn_claim_tx(view),
                CsyncTimer::ChEchoTx => self.on_ch_echo_tx(view),
                CsyncTimer::CbhDeclTx => self.on_cbh_decl_tx(view),
                CsyncTimer::ConvClaimTx { window } => self.on_conv_claim_tx(view, window),
                CsyncTimer::ConvFallback { window } => self.on_conv_fallback(view, window),
                CsyncTimer::AckTx { window } => self.on_ack_tx(view, window),
                CsyncTimer::RoundStart { round } => self.on_round_start(view, round),
                CsyncTimer::SyncWake { round } => {
                    let mut out = Out::default();
                    if round == self.current_round && self.phase == Phase::ConsensusSynchronization {
                        out.radio = Some(RadioState::IdleListen);
                    }
                    out
                }
                CsyncTimer::SyncTx { round } => self.on_sync_tx(view, round),
                CsyncTimer::RelayTx { round } => self.on_relay_tx(view, round),
                CsyncTimer::WindowSleep => {
                    let mut out = Out::default();
                    if self.phase == Phase::ConsensusSynchronization {
                        out.radio = Some(RadioState::Sleep);
                    }
                    out
                }
                CsyncTimer::IdleStart { round } => self.on_idle_start(view, round),
                CsyncTimer::ByzWatch { id } => self.on_byz_watch(view, id),
                CsyncTimer::EpochEnd => {
                    let mut out = Out::default();
                    out.notes.push(("epoch_end", format!("epoch={}", self.epoch)));
                    self.enter_discovery(view, &mut out);
                    out
                }
            },
            NodeEvent::Frame(frame) => {
                let mut out = Out::default();
                if self.blacklist.contains(&frame.src) {
                    return out;
                }
                let f = frame.clone();
                match &f.body {
                    Body::Discovery { degree, announce } => {
                        self.on_discovery_frame(view, &f, *degree, *announce, &mut out)
                    }
                    Body::ElectionReveal { degree } => {
                        if matches!(self.phase, Phase::ElectionRevelation | Phase::ElectionDeclaration) {
                            self.neighbor_degree.insert(f.src, *degree);
                        }
                    }
                    Body::ElectionDeclare { degree } => {
                        if self.phase == Phase::ElectionDeclaration {
                            self.heard_decls.insert(f.src, *degree);
                        }
                    }
                    Body::Connection(c) => self.on_connection_frame(view, &f, c, &mut out),
                    Body::SlotClaim { slot, ch_neighbor_count } => {
                        self.on_slot_claim(view, &f, *slot, *ch_neighbor_count, &mut out)
                    }
                    Body::SlotAck { entries, .. } => self.on_slot_ack(view, entries, &mut out),
                    Body::Sync { reference, hops, ch_slot } => {
                        self.on_sync_frame(view, &f, *reference, *hops, *ch_slot, &mut out)
                    }
                    Body::Byz(b) => self.on_byz_frame(view, &f, b, &mut out),
                }
                out
            }
        }
    }

    fn mac_stamp(&mut self, view: &HwReading) -> (f64, f64) {
        (self.clock.now(view.comp_us), self.clock.rate())
    }

    fn sample(&self, view: &HwReading) -> SampleInfo {
        SampleInfo {
            logical_us: self.clock.now(view.comp_us),
            rate: self.clock.rate(),
            lc_ref: self.lc_ref.map(|l| (l, self.lc_hops)),
            state_label: self.phase.as_str(),
        }
    }

    fn measure_ready(&self) -> bool {
        self.has_idled
    }

    fn discovery_active(&self) -> bool {
        self.phase == Phase::Discovery
    }

    fn cluster_report(&self) -> ClusterReport {
        self.rpt
    }
}

impl CsyncNode {
    fn on_connection_frame(&mut self, _view: &HwReading, frame: &Frame, body: &ConnectionBody, out: &mut Out) {
        match body {
            ConnectionBody::BridgeClaim { pair, token, degree } => {
                if self.phase != Phase::ConnectionRevelation || self.role != RoleKind::Ch {
                    return;
                }
                if pair.0 != self.addr && pair.1 != self.addr {
                    return;
                }
                if verify_cb_token(*token, *pair, frame.src) {
                    self.registered_cbs
                        .entry(norm_pair(pair.0, pair.1))
                        .or_default()
                        .insert(frame.src, *degree);
                    out.notes.push(("cb_registered", format!("cb={};pair={},{}", frame.src, pair.0, pair.1)));
                } else {
                    out.notes.push(("cb_rejected", format!("cb={};bad_token", frame.src)));
                }
            }
            ConnectionBody::ChEcho { candidates } => {
                if !matches!(
                    self.phase,
                    Phase::ConnectionDeclaration | Phase::ConsensusConvergence
                ) {
                    return;
                }
                for &(cb, deg, pair) in candidates {
                    // every cluster member learns its legitimate bridges
                    let in_my_cluster = Some(frame.src) == self.assoc_ch
                        || pair.0 == self.addr
                        || pair.1 == self.addr
                        || self.bridge_pair.map_or(false, |p| {
                            norm_pair(p.0, p.1) == norm_pair(pair.0, pair.1)
                                || p.0 == frame.src
                                || p.1 == frame.src
                        });
                    if in_my_cluster {
                        self.cluster_guards.insert(cb);
                    }
                    if self.role == RoleKind::Cb || self.role == RoleKind::Cbh {
                        if let Some(mine) = self.bridge_pair {
                            if norm_pair(mine.0, mine.1) == norm_pair(pair.0, pair.1) && cb != self.addr {
                                self.cb_rivals.insert(cb, deg);
                            }
                        }
                    }
                }
            }
            ConnectionBody::BridgeHeadDeclare { pair } => {
                let key = norm_pair(pair.0, pair.1);
                self.pair_cbh.insert(key, frame.src);
                if key.0 == self.addr || key.1 == self.addr || Some(frame.src) == self.assoc_ch {
                    self.cluster_guards.insert(frame.src);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::DCO_TICK_US;

    fn view(hw_us: f64) -> HwReading {
        HwReading {
            comp_us: hw_us,
            raw_ticks: (hw_us / DCO_TICK_US) as u64,
            comp_factor: 1.0,
            tick_us: DCO_TICK_US,
        }
    }

    fn beacon_from(src: u64, logical: f64, degree: u32) -> Frame {
        let mut f = Frame::new(NodeId(src), Body::Discovery { degree, announce: None });
        f.logical_time = logical;
        f.rate = 1.0;
        f
    }

    #[test]
    fn discovery_reception_increments_degree_and_stores_neighbor() {
        let mut n = CsyncNode::new(NodeId(1), ProtocolConfig::default(), 7, 0.0);
        n.on_event(&view(0.0), NodeEvent::Boot);
        assert_eq!(n.degree(), 0);
        n.on_event(&view(100.0), NodeEvent::Frame(&beacon_from(2, 105.0, 0)));
        assert_eq!(n.degree(), 1);
        assert!(n.tracker.contains(NodeId(2)));
        // repeated frames from the same neighbor do not inflate the degree
        n.on_event(&view(200.0), NodeEvent::Frame(&beacon_from(2, 205.0, 1)));
        assert_eq!(n.degree(), 1);
        n.on_event(&view(300.0), NodeEvent::Frame(&beacon_from(3, 295.0, 1)));
        assert_eq!(n.degree(), 2);
    }

    #[test]
    fn blacklisted_sender_leaves_state_unchanged() {
        let mut n = CsyncNode::new(NodeId(1), ProtocolConfig::default(), 7, 0.0);
        n.on_event(&view(0.0), NodeEvent::Boot);
        n.blacklist.insert(NodeId(2));
        let out = n.on_event(&view(100.0), NodeEvent::Frame(&beacon_from(2, 100.0, 0)));
        assert_eq!(n.degree(), 0);
        assert!(out.msgs.is_empty() && out.timers.is_empty() && out.notes.is_empty());
    }

    #[test]
    fn synced_node_announces_transition() {
        let cfg = ProtocolConfig { min_disc_updates: 2, ..ProtocolConfig::default() };
        let mut n = CsyncNode::new(NodeId(1), cfg, 7, 0.0);
        n.on_event(&view(0.0), NodeEvent::Boot);
        // two tight beacons from a neighbor, then two own beacon updates
        n.on_event(&view(1_000.0), NodeEvent::Frame(&beacon_from(2, 1_010.0, 1)));
        let o1 = n.on_event(&view(500_000.0), NodeEvent::Timer(CsyncTimer::Beacon));
        assert!(!n.announced, "one update must not satisfy the gate: {o1:?}");
        n.on_event(&view(1_000_000.0), NodeEvent::Frame(&beacon_from(2, n.clock.now(1_000_000.0) + 3.0, 1)));
        let out = n.on_event(&view(1_500_000.0), NodeEvent::Timer(CsyncTimer::Beacon));
        assert!(n.announced, "offset and rate within threshold must announce");
        let announced = out.msgs.iter().any(|m| matches!(m.body, Body::Discovery { announce: Some(_), .. }));
        assert!(announced);
    }

    #[test]
    fn announce_adoption_jumps_clock_and_schedules_transition() {
        let mut n = CsyncNode::new(NodeId(1), ProtocolConfig::default(), 7, 0.0);
        n.on_event(&view(0.0), NodeEvent::Boot);
        let mut f = Frame::new(NodeId(2), Body::Discovery { degree: 1, announce: Some(6_000_000.0) });
        f.logical_time = 1_000_000.0;
        f.rate = 1.0;
        let out = n.on_event(&view(400_000.0), NodeEvent::Frame(&f));
        assert!(n.announced);
        // clock jumped to the announcer's timeline
        assert!((n.clock.now(400_000.0) - 1_000_000.0).abs() < 1e-6);
        assert!(out
            .timers
            .iter()
            .any(|t| matches!(t.tag, CsyncTimer::Transition(Phase::ElectionRevelation))));
    }

    #[test]
    fn election_pipeline_roles_from_declarations() {
        let cfg = ProtocolConfig::default();
        let mut n = CsyncNode::new(NodeId(5), cfg, 7, 0.0);
        n.on_event(&view(0.0), NodeEvent::Boot);
        // three neighbors; the node has degree 3
        for (src, t) in [(2u64, 1_000.0), (3, 2_000.0), (9, 3_000.0)] {
            n.on_event(&view(t), NodeEvent::Frame(&beacon_from(src, t, 1)));
        }
        n.announced = true;
        n.epoch_ref = Some(10_000.0);
        n.phase = Phase::ElectionDeclaration;
        // a declaration with a higher degree wins; this node becomes its CM
        let mut decl = Frame::new(NodeId(9), Body::ElectionDeclare { degree: 5 });
        decl.logical_time = 20_000.0;
        n.on_event(&view(20_000.0), NodeEvent::Frame(&decl));
        let out = n.on_event(&view(25_000.0), NodeEvent::Timer(CsyncTimer::DeclTx));
        assert!(out.msgs.is_empty(), "declaration canceled by a higher rival");
        let mut out2 = Out::default();
        n.finalize_roles(&mut out2);
        assert_eq!(n.role, RoleKind::Cm);
        assert_eq!(n.assoc_ch, Some(NodeId(9)));
    }

    #[test]
    fn bridge_claim_requires_valid_token() {
        let cfg = ProtocolConfig::default();
        let mut ch = CsyncNode::new(NodeId(101), cfg, 7, 0.0);
        ch.on_event(&view(0.0), NodeEvent::Boot);
        ch.phase = Phase::ConnectionRevelation;
        ch.role = RoleKind::Ch;
        let pair = (NodeId(101), NodeId(102));
        let good = Frame::new(
            NodeId(51),
            Body::Connection(ConnectionBody::BridgeClaim {
                pair,
                token: cb_token(pair, NodeId(51)),
                degree: 4,
            }),
        );
        ch.on_event(&view(1_000.0), NodeEvent::Frame(&good));
        assert!(ch.registered_cbs[&pair].contains_key(&NodeId(51)));
        // a flooding node that never heard CH 101 cannot forge the pair token
        let forged = Frame::new(
            NodeId(66),
            Body::Connection(ConnectionBody::BridgeClaim {
                pair,
                token: cb_token((NodeId(102), NodeId(103)), NodeId(66)),
                degree: 9,
            }),
        );
        ch.on_event(&view(2_000.0), NodeEvent::Frame(&forged));
        assert!(!ch.registered_cbs[&pair].contains_key(&NodeId(66)));
    }

    #[test]
    fn sync_reception_updates_clock_and_learns_slot() {
        let cfg = ProtocolConfig::default();
        let mut cm = CsyncNode::new(NodeId(4), cfg, 7, 0.0);
        cm.on_event(&view(0.0), NodeEvent::Boot);
        cm.phase = Phase::ConsensusSynchronization;
        cm.role = RoleKind::Cm;
        cm.assoc_ch = Some(NodeId(102));
        cm.epoch_ref = Some(0.0);
        let mut sync = Frame::new(NodeId(102), Body::Sync { reference: NodeId(102), hops: 0, ch_slot: Some(2) });
        sync.logical_time = 50_000_000.0;
        sync.rate = 1.0;
        cm.on_event(&view(49_000_000.0), NodeEvent::Frame(&sync));
        assert_eq!(cm.cm_ch_slot, Some(2));
        assert_eq!(cm.lc_ref, Some(NodeId(102)));
        assert_eq!(cm.lc_hops, 1);
        assert!((cm.clock.now(49_000_000.0) - 50_000_000.0).abs() < 1e-6);
    }

    #[test]
    fn byz_message_without_bridge_reference_is_not_retransmitted() {
        let cfg = ProtocolConfig::default();
        let mut cm = CsyncNode::new(NodeId(4), cfg, 7, 0.0);
        cm.on_event(&view(0.0), NodeEvent::Boot);
        cm.phase = Phase::ConsensusSynchronization;
        cm.epoch_ref = Some(0.0);
        cm.cluster_guards.insert(NodeId(51));
        // a faulty CM fabricates a consensus message referencing itself
        let bad = ByzBody {
            initiator: NodeId(6),
            reference: NodeId(6),
            correct_time: 1_000.0,
            correct_rate: 1.0,
            suspect: NodeId(102),
        };
        let f = Frame::new(NodeId(6), Body::Byz(bad));
        let out = cm.on_event(&view(1_000.0), NodeEvent::Frame(&f));
        assert!(out.msgs.is_empty());
        // the same content referencing a legitimate bridge is re-transmitted
        let ok = ByzBody { reference: NodeId(51), ..bad };
        let f2 = Frame::new(NodeId(51), Body::Byz(ok));
        let out2 = cm.on_event(&view(1_100.0), NodeEvent::Frame(&f2));
        assert_eq!(out2.msgs.len(), 1);
    }

    #[test]
    fn watch_fires_on_missing_or_wrong_broadcast_only() {
        let cfg = ProtocolConfig::default();
        let mut cb = CsyncNode::new(NodeId(51), cfg, 7, 0.0);
        cb.on_event(&view(0.0), NodeEvent::Boot);
        cb.phase = Phase::ConsensusSynchronization;
        cb.epoch_ref = Some(0.0);
        cb.role = RoleKind::Cbh;
        cb.current_round = 0;

        // correct broadcast in-slot: watch satisfied, no consensus message
        cb.watches.insert(0, Watch { src: NodeId(102), round: 0, status: WatchStatus::Pending });
        let mut sync = Frame::new(NodeId(102), Body::Sync { reference: NodeId(102), hops: 0, ch_slot: Some(2) });
        sync.logical_time = cb.clock.now(10_000.0) + 100.0;
        cb.on_event(&view(10_000.0), NodeEvent::Frame(&sync));
        let out = cb.on_event(&view(20_000.0), NodeEvent::Timer(CsyncTimer::ByzWatch { id: 0 }));
        assert!(out.msgs.is_empty());

        // a 10 ms error exceeds the 500 us threshold: the scheduled message fires
        cb.watches.insert(1, Watch { src: NodeId(102), round: 0, status: WatchStatus::Pending });
        let mut bad = sync.clone();
        bad.logical_time = cb.clock.now(30_000.0) + 10_000.0;
        cb.on_event(&view(30_000.0), NodeEvent::Frame(&bad));
        let out = cb.on_event(&view(40_000.0), NodeEvent::Timer(CsyncTimer::ByzWatch { id: 1 }));
        assert_eq!(out.msgs.len(), 1);
        assert!(matches!(out.msgs[0].body, Body::Byz(b) if b.suspect == NodeId(102)));

        // missed broadcast entirely: fires at the scheduled time
        cb.watches.insert(2, Watch { src: NodeId(102), round: 0, status: WatchStatus::Pending });
        let out = cb.on_event(&view(50_000.0), NodeEvent::Timer(CsyncTimer::ByzWatch { id: 2 }));
        assert_eq!(out.msgs.len(), 1);
    }

    #[test]
    fn quorum_agreement_blacklists_suspect_and_corrects_clock() {
        let cfg = ProtocolConfig::default();
        let mut cm = CsyncNode::new(NodeId(4), cfg, 7, 0.0);
        cm.on_event(&view(0.0), NodeEvent::Boot);
        cm.phase = Phase::ConsensusSynchronization;
        cm.epoch_ref = Some(0.0);
        cm.cluster_guards.insert(NodeId(51));
        for n in [NodeId(102), NodeId(5), NodeId(6), NodeId(51)] {
            cm.neighbor_degree.insert(n, 1);
        }
        // n_i = 4 -> quorum 3
        let body = ByzBody {
            initiator: NodeId(51),
            reference: NodeId(51),
            correct_time: 900.0,
            correct_rate: 1.0,
            suspect: NodeId(102),
        };
        cm.on_event(&view(1_000.0), NodeEvent::Frame(&Frame::new(NodeId(51), Body::Byz(body))));
        assert!(cm.blacklist.is_empty());
        cm.on_event(&view(1_050.0), NodeEvent::Frame(&Frame::new(NodeId(5), Body::Byz(body))));
        assert!(cm.blacklist.is_empty());
        let out = cm.on_event(&view(1_100.0), NodeEvent::Frame(&Frame::new(NodeId(6), Body::Byz(body))));
        assert!(cm.blacklist.contains(&NodeId(102)));
        assert!(out.notes.iter().any(|(k, _)| *k == "byz_agree"));
        assert!((cm.clock.now(1_100.0) - 900.0).abs() < 1e-6);
    }
}
