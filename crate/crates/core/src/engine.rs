//! Deterministic discrete-event core.
//!
//! One scenario is one single-threaded event loop over a totally ordered queue
//! keyed by `(fire_time, sequence)`. Identical configuration and seed produce
//! a bit-identical trace.
//!
//! The radio channel is a broadcast medium with a CSMA-CA abstraction:
//! senders sense the channel before transmitting and back off a uniform
//! number of 320 us slots (up to five retries) when busy; frames that overlap
//! in time at a receiver corrupt each other and both are dropped. MAC-layer
//! timestamping stamps time-bearing frames at end of transmission, so
//! propagation delay does not enter the advertised clock values.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt;

use rand_chacha::ChaCha8Rng;

use crate::clock::{HardwareClock, HwReading};
use crate::message::Frame;
use crate::metrics::{ErrorSample, Relation};
use crate::resilience::{FaultKind, FaultSpec};
use crate::rng::{self, Stream};
use crate::topology::TopologyGraph;
use crate::{NodeId, SimNs};

/// Radio states with distinct power draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadioState {
    Tx,
    Rx,
    IdleListen,
    Sleep,
}

impl RadioState {
    pub fn as_str(self) -> &'static str {
        match self {
            RadioState::Tx => "TX",
            RadioState::Rx => "RX",
            RadioState::IdleListen => "IDLE_LISTEN",
            RadioState::Sleep => "SLEEP",
        }
    }

    fn index(self) -> usize {
        match self {
            RadioState::Tx => 0,
            RadioState::Rx => 1,
            RadioState::IdleListen => 2,
            RadioState::Sleep => 3,
        }
    }
}

/// Radio power constants in milliwatts (config-overridable defaults).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioPower {
    pub tx_mw: f64,
    pub rx_mw: f64,
    pub idle_listen_mw: f64,
    pub sleep_mw: f64,
}

impl Default for RadioPower {
    fn default() -> Self {
        RadioPower { tx_mw: 52.2, rx_mw: 56.4, idle_listen_mw: 56.4, sleep_mw: 0.003 }
    }
}

impl RadioPower {
    fn mw(&self, state: RadioState) -> f64 {
        match state {
            RadioState::Tx => self.tx_mw,
            RadioState::Rx => self.rx_mw,
            RadioState::IdleListen => self.idle_listen_mw,
            RadioState::Sleep => self.sleep_mw,
        }
    }
}

/// CSMA-CA and framing parameters (802.15.4 conventions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacConfig {
    pub frame_bytes: u32,
    pub backoff_slot_ns: SimNs,
    pub max_backoff_slots: u64,
    pub max_retries: u8,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            frame_bytes: 64,
            backoff_slot_ns: 320_000,
            max_backoff_slots: 8,
            max_retries: 5,
        }
    }
}

impl MacConfig {
    /// Frame airtime at 250 kbps: 32 us per byte.
    pub fn airtime_ns(&self) -> SimNs {
        self.frame_bytes as SimNs * 32_000
    }

    /// One message transmission time: airtime plus the worst-case backoff.
    pub fn tx_time_ns(&self) -> SimNs {
        self.airtime_ns() + self.max_backoff_slots * self.backoff_slot_ns
    }
}

/// Engine-level configuration.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub power: RadioPower,
    pub mac: MacConfig,
    /// Error sampling period once the measurement window opens.
    pub sample_period_ns: SimNs,
    /// Emit per-frame trace records (tx/rx/drop). Off by default: state and
    /// protocol events are enough for reports and keep traces compact.
    pub trace_frames: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            power: RadioPower::default(),
            mac: MacConfig::default(),
            sample_period_ns: crate::secs(5),
            trace_frames: false,
        }
    }
}

/// Per-node accumulated energy by radio state.
///
/// Time spent receiving delivered frames is carved out of the listen bucket
/// at reporting time (same power draw, separate accounting).
#[derive(Debug, Clone, Default)]
pub struct PowerLedger {
    duration_ns: [u64; 4],
    energy_uj: [f64; 4],
    rx_carved_ns: u64,
}

impl PowerLedger {
    fn accrue(&mut self, state: RadioState, dur_ns: SimNs, power: &RadioPower) {
        self.duration_ns[state.index()] += dur_ns;
        self.energy_uj[state.index()] += power.mw(state) * dur_ns as f64 * 1e-6;
    }

    fn carve_rx(&mut self, dur_ns: SimNs) {
        self.rx_carved_ns += dur_ns;
    }

    /// Total accumulated duration across states, nanoseconds.
    pub fn total_duration_ns(&self) -> u64 {
        self.duration_ns.iter().sum()
    }

    /// Total energy in microjoules.
    pub fn total_energy_uj(&self) -> f64 {
        self.energy_uj.iter().sum()
    }

    /// Duration attributed to a state, with frame receptions carved out of
    /// the listen bucket into RX.
    pub fn duration_ns_of(&self, state: RadioState) -> u64 {
        match state {
            RadioState::Rx => self.duration_ns[RadioState::Rx.index()] + self.rx_carved_ns,
            RadioState::IdleListen => {
                self.duration_ns[RadioState::IdleListen.index()].saturating_sub(self.rx_carved_ns)
            }
            s => self.duration_ns[s.index()],
        }
    }

    /// Energy attributed to a state, microjoules.
    pub fn energy_uj_of(&self, state: RadioState, power: &RadioPower) -> f64 {
        match state {
            RadioState::Rx => {
                self.energy_uj[RadioState::Rx.index()]
                    + power.rx_mw * self.rx_carved_ns as f64 * 1e-6
            }
            RadioState::IdleListen => {
                self.energy_uj[RadioState::IdleListen.index()]
                    - power.idle_listen_mw * self.rx_carved_ns as f64 * 1e-6
            }
            s => self.energy_uj[s.index()],
        }
    }

    /// Fraction of accounted time with the radio on (anything but sleep).
    pub fn radio_on_fraction(&self) -> f64 {
        let total = self.total_duration_ns();
        if total == 0 {
            return 0.0;
        }
        let sleep = self.duration_ns[RadioState::Sleep.index()];
        (total - sleep) as f64 / total as f64
    }
}

/// Events delivered to a node behavior.
#[derive(Debug)]
pub enum NodeEvent<'a, T> {
    /// The node powers up.
    Boot,
    /// A frame arrived intact and the radio was listening.
    Frame(&'a Frame),
    /// A previously requested timer fired.
    Timer(T),
}

/// A timer request against the node's own hardware clock.
#[derive(Debug, Clone)]
pub struct TimerReq<T> {
    pub at_raw_ticks: u64,
    pub tag: T,
}

/// Everything a step produces; the engine owns all side effects.
#[derive(Debug)]
pub struct StepOutput<T> {
    pub msgs: Vec<Frame>,
    pub timers: Vec<TimerReq<T>>,
    /// Requested persistent radio state (listen or sleep).
    pub radio: Option<RadioState>,
    /// Protocol-level trace events: (kind, detail).
    pub notes: Vec<(&'static str, String)>,
}

impl<T> Default for StepOutput<T> {
    fn default() -> Self {
        StepOutput { msgs: Vec::new(), timers: Vec::new(), radio: None, notes: Vec::new() }
    }
}

/// Snapshot data for error sampling.
#[derive(Debug, Clone, Copy)]
pub struct SampleInfo {
    pub logical_us: f64,
    pub rate: f64,
    /// Local center this node currently references, with hop count.
    pub lc_ref: Option<(NodeId, u8)>,
    pub state_label: &'static str,
}

/// Final cluster membership for the adjacency report.
#[derive(Debug, Clone, Copy)]
pub struct ClusterReport {
    pub role: &'static str,
    pub ch: Option<NodeId>,
    pub slot: Option<u8>,
    pub is_lc: bool,
}

/// A protocol node driven by the engine.
pub trait NodeBehavior {
    type Timer: Clone + fmt::Debug;

    fn on_event(&mut self, view: &HwReading, ev: NodeEvent<'_, Self::Timer>)
        -> StepOutput<Self::Timer>;

    /// Reads the logical clock for MAC timestamping at end of transmission.
    fn mac_stamp(&mut self, view: &HwReading) -> (f64, f64);

    /// Clock snapshot for error sampling.
    fn sample(&self, view: &HwReading) -> SampleInfo;

    /// Whether this node has reached its measurement-ready point (first idle
    /// phase for the clustered protocol, initial convergence for the
    /// baseline).
    fn measure_ready(&self) -> bool;

    /// Whether the node currently considers itself in a discovery state
    /// (discovery-flood faults boost power only then).
    fn discovery_active(&self) -> bool;

    fn cluster_report(&self) -> ClusterReport;
}

/// Engine errors: simulation-level invariant violations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineError {
    /// An event was scheduled in the past.
    PastEvent { now_ns: SimNs, at_ns: SimNs },
    /// Conflicting radio reservations (a protocol bug).
    RadioConflict { node: NodeId, at_ns: SimNs },
    /// A cross-cutting simulation invariant failed.
    Invariant(String),
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::PastEvent { now_ns, at_ns } => {
                write!(f, "event scheduled in the past: now={now_ns}ns at={at_ns}ns")
            }
            EngineError::RadioConflict { node, at_ns } => {
                write!(f, "conflicting radio reservation at node {node}, t={at_ns}ns")
            }
            EngineError::Invariant(s) => write!(f, "invariant violation: {s}"),
        }
    }
}

impl core::error::Error for EngineError {}

/// One trace record: `t_us,node,event_kind,detail`.
#[derive(Debug, Clone)]
pub struct TraceLine {
    pub t_ns: SimNs,
    pub node: Option<NodeId>,
    pub kind: &'static str,
    pub detail: String,
}

impl TraceLine {
    /// The documented line format. Times print as microseconds with
    /// nanosecond decimals.
    pub fn to_line(&self) -> String {
        let us = self.t_ns / 1_000;
        let frac = self.t_ns % 1_000;
        let node = match self.node {
            Some(n) => format!("{n}"),
            None => String::from("-"),
        };
        if frac == 0 {
            format!("{us},{node},{},{}", self.kind, self.detail)
        } else {
            format!("{us}.{frac:03},{node},{},{}", self.kind, self.detail)
        }
    }
}

#[derive(Debug)]
enum EventKind<T> {
    Boot(NodeId),
    Timer(NodeId, T),
    TxAttempt { src: NodeId, frame: Frame, retries: u8 },
    TxComplete { tx_id: u64 },
    Delivery { tx_id: u64, dst: NodeId, frame: Frame, window_start_ns: SimNs },
    FaultEdge { index: usize, on: bool },
    Sample,
}

struct Scheduled<T> {
    at_ns: SimNs,
    seq: u64,
    kind: EventKind<T>,
}

impl<T> PartialEq for Scheduled<T> {
    fn eq(&self, other: &Self) -> bool {
        self.at_ns == other.at_ns && self.seq == other.seq
    }
}
impl<T> Eq for Scheduled<T> {}
impl<T> PartialOrd for Scheduled<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Scheduled<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at_ns, self.seq).cmp(&(other.at_ns, other.seq))
    }
}

struct ActiveTx {
    src: NodeId,
    start_ns: SimNs,
    end_ns: SimNs,
    power_mult: f64,
    frame: Frame,
    receivers: Vec<NodeId>,
}

struct NodeSlot<B> {
    behavior: B,
    hw: HardwareClock,
    boot_ns: SimNs,
    booted: bool,
    radio: RadioState,
    radio_since: SimNs,
    /// State to restore after an engine-managed TX burst.
    tx_restore: Option<RadioState>,
    ledger: PowerLedger,
    mac_rng: ChaCha8Rng,
    fault_rng: ChaCha8Rng,
}

/// Aggregated results of one run.
pub struct RunReport {
    pub trace: Vec<TraceLine>,
    pub ledgers: BTreeMap<NodeId, PowerLedger>,
    pub samples: Vec<ErrorSample>,
    pub cluster: BTreeMap<NodeId, ClusterReport>,
    pub measurement_start_ns: Option<SimNs>,
    pub end_ns: SimNs,
    /// Protocol-flagged assumption violations (exit code 4 upstream).
    pub assumption_flags: Vec<String>,
}

/// The simulator.
pub struct Engine<B: NodeBehavior> {
    cfg: EngineConfig,
    topo: TopologyGraph,
    now_ns: SimNs,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled<B::Timer>>>,
    nodes: BTreeMap<NodeId, NodeSlot<B>>,
    active_txs: BTreeMap<u64, ActiveTx>,
    next_tx_id: u64,
    /// In-flight reception windows per receiver, for collision detection.
    inflight_rx: BTreeMap<NodeId, Vec<(u64, SimNs, SimNs)>>,
    corrupted: BTreeSet<(u64, NodeId)>,
    faults: Vec<FaultSpec>,
    fault_active: Vec<bool>,
    trace: Vec<TraceLine>,
    samples: Vec<ErrorSample>,
    measurement_start: Option<SimNs>,
    assumption_flags: Vec<String>,
}

impl<B: NodeBehavior> Engine<B> {
    /// Builds an engine over `topo`. `nodes` supplies each behavior with its
    /// hardware clock and boot time.
    pub fn new(
        topo: TopologyGraph,
        cfg: EngineConfig,
        seed: u64,
        nodes: Vec<(NodeId, B, HardwareClock, SimNs)>,
        faults: Vec<FaultSpec>,
    ) -> Self {
        let mut slots = BTreeMap::new();
        for (id, behavior, hw, boot_ns) in nodes {
            assert!(topo.contains(id), "behavior for unknown node {id}");
            let radio = if boot_ns == 0 { RadioState::IdleListen } else { RadioState::Sleep };
            slots.insert(
                id,
                NodeSlot {
                    behavior,
                    hw,
                    boot_ns,
                    booted: false,
                    radio,
                    radio_since: 0,
                    tx_restore: None,
                    ledger: PowerLedger::default(),
                    mac_rng: rng::derive(seed, Stream::Mac(id.0)),
                    fault_rng: rng::derive(seed, Stream::Fault(id.0)),
                },
            );
        }
        let fault_active = alloc::vec![false; faults.len()];
        let mut eng = Engine {
            cfg,
            topo,
            now_ns: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: slots,
            active_txs: BTreeMap::new(),
            next_tx_id: 0,
            inflight_rx: BTreeMap::new(),
            corrupted: BTreeSet::new(),
            faults,
            fault_active,
            trace: Vec::new(),
            samples: Vec::new(),
            measurement_start: None,
            assumption_flags: Vec::new(),
        };
        let boots: Vec<(NodeId, SimNs)> =
            eng.nodes.iter().map(|(&id, s)| (id, s.boot_ns)).collect();
        for (id, boot_ns) in boots {
            eng.schedule(boot_ns, EventKind::Boot(id)).expect("boot in the past");
        }
        for i in 0..eng.faults.len() {
            let (from, until) = (eng.faults[i].from_ns, eng.faults[i].until_ns);
            eng.schedule(from, EventKind::FaultEdge { index: i, on: true }).unwrap();
            eng.schedule(until, EventKind::FaultEdge { index: i, on: false }).unwrap();
        }
        eng
    }

    pub fn now_ns(&self) -> SimNs {
        self.now_ns
    }

    fn schedule(&mut self, at_ns: SimNs, kind: EventKind<B::Timer>) -> Result<(), EngineError> {
        if at_ns < self.now_ns {
            return Err(EngineError::PastEvent { now_ns: self.now_ns, at_ns });
        }
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { at_ns, seq, kind }));
        Ok(())
    }

    fn trace_push(&mut self, node: Option<NodeId>, kind: &'static str, detail: String) {
        self.trace.push(TraceLine { t_ns: self.now_ns, node, kind, detail });
    }

    fn active_faults_of(&self, node: NodeId) -> impl Iterator<Item = &FaultSpec> {
        self.faults
            .iter()
            .zip(self.fault_active.iter())
            .filter(move |(f, active)| **active && f.target == node)
            .map(|(f, _)| f)
    }

    fn fail_stopped(&self, node: NodeId) -> bool {
        self.active_faults_of(node).any(|f| f.kind == FaultKind::FailStop)
    }

    fn set_radio(&mut self, node: NodeId, state: RadioState) -> Result<(), EngineError> {
        let now = self.now_ns;
        let power = self.cfg.power;
        let slot = self.nodes.get_mut(&node).expect("unknown node");
        if slot.radio == RadioState::Tx && state != RadioState::Tx && slot.tx_restore.is_some() {
            // a node may not retune mid-transmission
            return Err(EngineError::RadioConflict { node, at_ns: now });
        }
        if slot.radio != state {
            let dur = now - slot.radio_since;
            slot.ledger.accrue(slot.radio, dur, &power);
            slot.radio = state;
            slot.radio_since = now;
        }
        Ok(())
    }

    fn channel_busy(&self, src: NodeId) -> bool {
        if self.nodes[&src].radio == RadioState::Tx {
            return true;
        }
        self.active_txs
            .values()
            .any(|tx| tx.end_ns > self.now_ns && self.topo.hears(src, tx.src, tx.power_mult))
    }

    fn dispatch(&mut self, node: NodeId, ev_is_boot: bool, frame: Option<&Frame>, timer: Option<B::Timer>) -> Result<(), EngineError> {
        if self.fail_stopped(node) && !ev_is_boot {
            return Ok(());
        }
        let now = self.now_ns;
        let out = {
            let slot = self.nodes.get_mut(&node).expect("unknown node");
            if !slot.booted && !ev_is_boot {
                return Ok(());
            }
            slot.hw.advance_to(now);
            let view = slot.hw.reading();
            let ev = if ev_is_boot {
                slot.booted = true;
                NodeEvent::Boot
            } else if let Some(f) = frame {
                NodeEvent::Frame(f)
            } else {
                NodeEvent::Timer(timer.expect("timer event without tag"))
            };
            slot.behavior.on_event(&view, ev)
        };
        self.process_output(node, out)
    }

    fn process_output(&mut self, node: NodeId, out: StepOutput<B::Timer>) -> Result<(), EngineError> {
        for (kind, detail) in out.notes {
            if kind == "assumption" {
                self.assumption_flags.push(detail.clone());
                self.trace_push(Some(node), "assumption_violation", detail);
            } else {
                self.trace_push(Some(node), kind, detail);
            }
        }
        if let Some(state) = out.radio {
            debug_assert!(
                matches!(state, RadioState::IdleListen | RadioState::Sleep),
                "behaviors request listen or sleep; TX/RX are engine-managed"
            );
            self.set_radio(node, state)?;
        }
        for req in out.timers {
            let at = {
                let slot = &self.nodes[&node];
                slot.hw.true_ns_for_raw_ticks(req.at_raw_ticks).max(self.now_ns)
            };
            self.schedule(at, EventKind::Timer(node, req.tag))?;
        }
        for frame in out.msgs {
            // drop-type faults silence frames before they reach the channel
            let mut dropped = false;
            let msg_type = frame.msg_type();
            let coins: Vec<(usize, bool)> = {
                let faults = &self.faults;
                let active = &self.fault_active;
                let slot = self.nodes.get_mut(&node).unwrap();
                faults
                    .iter()
                    .enumerate()
                    .filter(|(i, f)| active[*i] && f.target == node)
                    .map(|(i, f)| {
                        let p = f.magnitude;
                        let c = matches!(
                            f.kind,
                            FaultKind::Intermittent | FaultKind::SelectiveForward
                        ) && rng::coin(&mut slot.fault_rng, p);
                        (i, c)
                    })
                    .collect()
            };
            for (i, coin) in coins {
                if self.faults[i].drops_tx(msg_type, coin) {
                    dropped = true;
                }
            }
            if dropped {
                if self.cfg.trace_frames {
                    self.trace_push(Some(node), "tx_fault_drop", format!("type={}", msg_type.as_str()));
                }
                continue;
            }
            self.schedule(self.now_ns, EventKind::TxAttempt { src: node, frame, retries: 0 })?;
        }
        Ok(())
    }

    fn handle_tx_attempt(&mut self, src: NodeId, frame: Frame, retries: u8) -> Result<(), EngineError> {
        if self.fail_stopped(src) {
            return Ok(());
        }
        if self.channel_busy(src) {
            if retries >= self.cfg.mac.max_retries {
                self.trace_push(Some(src), "tx_abandoned", format!("type={}", frame.msg_type().as_str()));
                return Ok(());
            }
            let slots = {
                let slot = self.nodes.get_mut(&src).unwrap();
                1 + rng::uniform_u64(&mut slot.mac_rng, self.cfg.mac.max_backoff_slots)
            };
            let at = self.now_ns + slots * self.cfg.mac.backoff_slot_ns;
            return self.schedule(at, EventKind::TxAttempt { src, frame, retries: retries + 1 });
        }

        // channel clear: start transmitting
        let power_mult = if self.nodes[&src].behavior.discovery_active() {
            self.active_faults_of(src)
                .map(|f| f.discovery_power_mult())
                .fold(1.0, f64::max)
        } else {
            1.0
        };
        let start = self.now_ns;
        let end = start + self.cfg.mac.airtime_ns();
        let receivers = self.topo.receivers(src, power_mult);

        {
            let prev = self.nodes[&src].radio;
            self.set_radio(src, RadioState::Tx)?;
            self.nodes.get_mut(&src).unwrap().tx_restore = Some(prev);
        }

        let tx_id = self.next_tx_id;
        self.next_tx_id += 1;

        // mark collision windows at every receiver this RF energy reaches
        for &dst in &receivers {
            if dst == src {
                continue;
            }
            let prop = self.topo.prop_delay_ns(src, dst);
            let (ws, we) = (start + prop, end + prop);
            let entries = self.inflight_rx.entry(dst).or_default();
            for &(other_id, os, oe) in entries.iter() {
                if ws < oe && os < we {
                    self.corrupted.insert((tx_id, dst));
                    self.corrupted.insert((other_id, dst));
                }
            }
            entries.push((tx_id, ws, we));
        }

        self.active_txs.insert(
            tx_id,
            ActiveTx { src, start_ns: start, end_ns: end, power_mult, frame, receivers },
        );
        if self.cfg.trace_frames {
            let t = self.active_txs[&tx_id].frame.msg_type().as_str();
            self.trace_push(Some(src), "tx_start", format!("type={t};mult={power_mult}"));
        }
        self.schedule(end, EventKind::TxComplete { tx_id })
    }

    fn handle_tx_complete(&mut self, tx_id: u64) -> Result<(), EngineError> {
        let Some(mut tx) = self.active_txs.remove(&tx_id) else { return Ok(()) };
        let src = tx.src;
        // restore the pre-TX radio state
        {
            let restore = self.nodes.get_mut(&src).unwrap().tx_restore.take();
            if let Some(prev) = restore {
                let now = self.now_ns;
                let power = self.cfg.power;
                let slot = self.nodes.get_mut(&src).unwrap();
                let dur = now - slot.radio_since;
                slot.ledger.accrue(slot.radio, dur, &power);
                slot.radio = prev;
                slot.radio_since = now;
            }
        }
        // MAC timestamp at end of transmission
        if tx.frame.carries_time() {
            let (logical, rate) = {
                let slot = self.nodes.get_mut(&src).unwrap();
                slot.hw.advance_to(self.now_ns);
                let view = slot.hw.reading();
                slot.behavior.mac_stamp(&view)
            };
            tx.frame.logical_time = logical;
            tx.frame.rate = rate;
            // time faults alter the advertised clock value
            let shift: f64 = self.active_faults_of(src).map(|f| f.time_shift_us()).sum();
            if shift != 0.0 {
                tx.frame.logical_time += shift;
            }
        }
        for &dst in &tx.receivers {
            if dst == src {
                continue;
            }
            let prop = self.topo.prop_delay_ns(src, dst);
            self.schedule(
                tx.end_ns + prop,
                EventKind::Delivery {
                    tx_id,
                    dst,
                    frame: tx.frame.clone(),
                    window_start_ns: tx.start_ns + prop,
                },
            )?;
        }
        Ok(())
    }

    fn handle_delivery(
        &mut self,
        tx_id: u64,
        dst: NodeId,
        frame: Frame,
        window_start_ns: SimNs,
    ) -> Result<(), EngineError> {
        if let Some(entries) = self.inflight_rx.get_mut(&dst) {
            entries.retain(|&(id, _, _)| id != tx_id);
        }
        if self.corrupted.remove(&(tx_id, dst)) {
            if self.cfg.trace_frames {
                self.trace_push(Some(dst), "rx_collision", format!("src={}", frame.src));
            }
            return Ok(());
        }
        // the radio must have been listening for the whole frame
        let listening = {
            let slot = &self.nodes[&dst];
            slot.booted
                && slot.radio == RadioState::IdleListen
                && slot.radio_since <= window_start_ns
        };
        if !listening || self.fail_stopped(dst) {
            if self.cfg.trace_frames {
                self.trace_push(Some(dst), "rx_missed", format!("src={}", frame.src));
            }
            return Ok(());
        }
        let airtime = self.cfg.mac.airtime_ns();
        self.nodes.get_mut(&dst).unwrap().ledger.carve_rx(airtime);
        if self.cfg.trace_frames {
            self.trace_push(
                Some(dst),
                "rx",
                format!("src={};type={}", frame.src, frame.msg_type().as_str()),
            );
        }
        self.dispatch(dst, false, Some(&frame), None)
    }

    fn handle_sample(&mut self) -> Result<(), EngineError> {
        let now = self.now_ns;
        let mut infos: BTreeMap<NodeId, SampleInfo> = BTreeMap::new();
        for (&id, slot) in self.nodes.iter_mut() {
            if !slot.booted {
                continue;
            }
            slot.hw.advance_to(now);
            let view = slot.hw.reading();
            infos.insert(id, slot.behavior.sample(&view));
        }
        for (a, b) in self.topo.link_pairs() {
            let (Some(ia), Some(ib)) = (infos.get(&a), infos.get(&b)) else { continue };
            let err = ia.logical_us - ib.logical_us;
            self.samples.push(ErrorSample {
                t_ns: now,
                node_a: a,
                node_b: b,
                signed_error_us: err,
                relation: Relation::Neighbor,
                hops: 0,
            });
        }
        for (&id, info) in &infos {
            let Some((lc, hops)) = info.lc_ref else { continue };
            let Some(lc_info) = infos.get(&lc) else { continue };
            let err = if id == lc { 0.0 } else { info.logical_us - lc_info.logical_us };
            self.samples.push(ErrorSample {
                t_ns: now,
                node_a: id,
                node_b: lc,
                signed_error_us: err,
                relation: Relation::ToLc,
                hops,
            });
        }
        self.schedule(now + self.cfg.sample_period_ns, EventKind::Sample)
    }

    fn maybe_open_measurement(&mut self) -> Result<(), EngineError> {
        if self.measurement_start.is_some() {
            return Ok(());
        }
        let ready = self
            .nodes
            .values()
            .all(|s| s.booted && s.behavior.measure_ready());
        if ready {
            self.measurement_start = Some(self.now_ns);
            self.trace_push(None, "measure_start", String::new());
            self.schedule(self.now_ns + self.cfg.sample_period_ns, EventKind::Sample)?;
        }
        Ok(())
    }

    /// Runs the event loop until `t_end_ns`. Early queue exhaustion is legal
    /// (quiescence).
    pub fn run_until(mut self, t_end_ns: SimNs) -> Result<RunReport, EngineError> {
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.at_ns > t_end_ns {
                // leave it unprocessed; the run is over
                break;
            }
            self.now_ns = ev.at_ns;
            match ev.kind {
                EventKind::Boot(node) => {
                    self.trace_push(Some(node), "boot", String::new());
                    if self.nodes[&node].radio == RadioState::Sleep {
                        self.set_radio(node, RadioState::IdleListen)?;
                    }
                    self.dispatch(node, true, None, None)?;
                }
                EventKind::Timer(node, tag) => {
                    self.dispatch(node, false, None, Some(tag))?;
                }
                EventKind::TxAttempt { src, frame, retries } => {
                    self.handle_tx_attempt(src, frame, retries)?;
                }
                EventKind::TxComplete { tx_id } => {
                    self.handle_tx_complete(tx_id)?;
                }
                EventKind::Delivery { tx_id, dst, frame, window_start_ns } => {
                    self.handle_delivery(tx_id, dst, frame, window_start_ns)?;
                }
                EventKind::FaultEdge { index, on } => {
                    self.fault_active[index] = on;
                    let f = &self.faults[index];
                    let detail =
                        format!("kind={};mag={}", f.kind.as_str(), f.magnitude);
                    let target = f.target;
                    self.trace_push(Some(target), if on { "fault_on" } else { "fault_off" }, detail);
                }
                EventKind::Sample => {
                    self.handle_sample()?;
                }
            }
            self.maybe_open_measurement()?;
        }

        self.now_ns = t_end_ns;
        let power = self.cfg.power;
        let mut ledgers = BTreeMap::new();
        let mut cluster = BTreeMap::new();
        let node_ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in node_ids {
            {
                let slot = self.nodes.get_mut(&id).unwrap();
                let dur = t_end_ns - slot.radio_since;
                slot.ledger.accrue(slot.radio, dur, &power);
                slot.radio_since = t_end_ns;
            }
            let slot = &self.nodes[&id];
            let l = &slot.ledger;
            if l.total_duration_ns() != t_end_ns {
                return Err(EngineError::Invariant(format!(
                    "power ledger of node {id} covers {}ns of a {}ns run",
                    l.total_duration_ns(),
                    t_end_ns
                )));
            }
            let detail = format!(
                "tx_us={};rx_us={};idle_us={};sleep_us={};tx_uj={:.3};rx_uj={:.3};idle_uj={:.3};sleep_uj={:.3}",
                l.duration_ns_of(RadioState::Tx) / 1_000,
                l.duration_ns_of(RadioState::Rx) / 1_000,
                l.duration_ns_of(RadioState::IdleListen) / 1_000,
                l.duration_ns_of(RadioState::Sleep) / 1_000,
                l.energy_uj_of(RadioState::Tx, &power),
                l.energy_uj_of(RadioState::Rx, &power),
                l.energy_uj_of(RadioState::IdleListen, &power),
                l.energy_uj_of(RadioState::Sleep, &power),
            );
            self.trace.push(TraceLine { t_ns: t_end_ns, node: Some(id), kind: "power_final", detail });
            ledgers.insert(id, slot.ledger.clone());
            let r = slot.behavior.cluster_report();
            let cdetail = format!(
                "role={};ch={};slot={};lc={}",
                r.role,
                r.ch.map(|c| format!("{c}")).unwrap_or_else(|| String::from("-")),
                r.slot.map(|s| format!("{s}")).unwrap_or_else(|| String::from("-")),
                if r.is_lc { 1 } else { 0 }
            );
            self.trace.push(TraceLine { t_ns: t_end_ns, node: Some(id), kind: "cluster", detail: cdetail });
            cluster.insert(id, r);
        }

        Ok(RunReport {
            trace: self.trace,
            ledgers,
            samples: self.samples,
            cluster,
            measurement_start_ns: self.measurement_start,
            end_ns: t_end_ns,
            assumption_flags: self.assumption_flags,
        })
    }
}
