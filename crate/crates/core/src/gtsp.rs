//! Neighbor-averaging baseline protocol on the same simulation engine.
//!
//! Every node beacons its logical time and rate on a fixed period, stores
//! what it hears from 1-hop neighbors, and averages rates and offsets each
//! period. The radio never sleeps (continuous listen), which is what drives
//! the power gap against the clustered protocol.

use alloc::string::String;

use rand_chacha::ChaCha8Rng;

use crate::clock::{HwReading, LogicalClock, NeighborTracker};
use crate::engine::{
    ClusterReport, NodeBehavior, NodeEvent, RadioState, SampleInfo, StepOutput, TimerReq,
};
use crate::message::{Body, Frame};
use crate::rng::{self, Stream};
use crate::NodeId;

/// Minimum receiver-time baseline for a differential rate estimate.
const RATE_BASELINE_US: f64 = 200_000.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GtspTimer {
    Beacon,
}

/// Baseline protocol parameters, logical microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct GtspConfig {
    pub beacon_period_us: f64,
    /// Convergence gate: the measurement window opens once every node's
    /// neighborhood agrees within this threshold.
    pub sync_threshold_us: f64,
    pub min_updates: u32,
}

impl Default for GtspConfig {
    fn default() -> Self {
        GtspConfig {
            beacon_period_us: 30_000_000.0,
            sync_threshold_us: 2_560.0,
            min_updates: 2,
        }
    }
}

/// One baseline node.
pub struct GtspNode {
    addr: NodeId,
    cfg: GtspConfig,
    clock: LogicalClock,
    tracker: NeighborTracker,
    updates: u32,
    converged: bool,
    rng: ChaCha8Rng,
}

impl GtspNode {
    pub fn new(addr: NodeId, cfg: GtspConfig, seed: u64, initial_hw_us: f64) -> Self {
        GtspNode {
            addr,
            cfg,
            clock: LogicalClock::new(initial_hw_us),
            tracker: NeighborTracker::default(),
            updates: 0,
            converged: false,
            rng: rng::derive(seed, Stream::Protocol(addr.0)),
        }
    }

    pub fn logical_now(&self, view: &HwReading) -> f64 {
        self.clock.now(view.comp_us)
    }

    pub fn rate(&self) -> f64 {
        self.clock.rate()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Test hook: seed a non-unit logical rate.
    pub fn set_rate_for_test(&mut self, hw_us: f64, rate: f64) {
        self.clock.set_rate(hw_us, rate).unwrap();
    }

    fn beacon(&mut self, view: &HwReading) -> StepOutput<GtspTimer> {
        let mut out = StepOutput::default();
        let hw = view.comp_us;
        let samples = self.tracker.samples(hw, 3.0 * self.cfg.beacon_period_us);
        if !samples.is_empty() {
            let upd = self.clock.average_update(hw, &samples);
            self.updates += 1;
            if !self.converged
                && self.updates >= self.cfg.min_updates
                && upd.max_abs_neighbor_offset <= self.cfg.sync_threshold_us
                && upd.max_rel_rate_spread <= self.cfg.sync_threshold_us * 1e-6
            {
                self.converged = true;
                out.notes.push(("converged", String::new()));
            }
        } else if !self.converged && self.updates == 0 {
            // an isolated node is trivially synchronized to itself
            self.converged = true;
            out.notes.push(("converged", String::from("isolated")));
        }
        out.msgs.push(Frame::new(
            self.addr,
            Body::Sync { reference: self.addr, hops: 0, ch_slot: None },
        ));
        let next = self.cfg.beacon_period_us * (0.9 + 0.2 * rng::uniform_f64(&mut self.rng));
        let comp_target = hw + next / self.clock.rate();
        out.timers.push(TimerReq {
            at_raw_ticks: view.raw_ticks_for_comp_us(comp_target),
            tag: GtspTimer::Beacon,
        });
        out
    }
}

impl NodeBehavior for GtspNode {
    type Timer = GtspTimer;

    fn on_event(&mut self, view: &HwReading, ev: NodeEvent<'_, GtspTimer>) -> StepOutput<GtspTimer> {
        match ev {
            NodeEvent::Boot => {
                let mut out = StepOutput::default();
                out.radio = Some(RadioState::IdleListen);
                let first = 0.1 * self.cfg.beacon_period_us
                    + rng::uniform_range(&mut self.rng, 0.0, self.cfg.beacon_period_us);
                let comp_target = view.comp_us + first / self.clock.rate();
                out.timers.push(TimerReq {
                    at_raw_ticks: view.raw_ticks_for_comp_us(comp_target),
                    tag: GtspTimer::Beacon,
                });
                out
            }
            NodeEvent::Timer(GtspTimer::Beacon) => self.beacon(view),
            NodeEvent::Frame(frame) => {
                if let Body::Sync { .. } = frame.body {
                    self.tracker.observe(
                        frame.src,
                        frame.logical_time,
                        frame.rate,
                        view.comp_us,
                        RATE_BASELINE_US,
                    );
                }
                StepOutput::default()
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
            lc_ref: None,
            state_label: if self.converged { "SYNCED" } else { "CONVERGING" },
        }
    }

    fn measure_ready(&self) -> bool {
        self.converged
    }

    fn discovery_active(&self) -> bool {
        false
    }

    fn cluster_report(&self) -> ClusterReport {
        ClusterReport { role: "GTSP", ch: None, slot: None, is_lc: false }
    }
}

/// Either protocol, so one engine type drives a whole scenario.
pub enum ProtocolNode {
    Csync(crate::protocol::CsyncNode),
    Gtsp(GtspNode),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolTimer {
    Csync(crate::protocol::CsyncTimer),
    Gtsp(GtspTimer),
}

impl NodeBehavior for ProtocolNode {
    type Timer = ProtocolTimer;

    fn on_event(&mut self, view: &HwReading, ev: NodeEvent<'_, ProtocolTimer>) -> StepOutput<ProtocolTimer> {
        match self {
            ProtocolNode::Csync(n) => {
                let mapped = match ev {
                    NodeEvent::Boot => NodeEvent::Boot,
                    NodeEvent::Frame(f) => NodeEvent::Frame(f),
                    NodeEvent::Timer(ProtocolTimer::Csync(t)) => NodeEvent::Timer(t),
                    NodeEvent::Timer(ProtocolTimer::Gtsp(_)) => return StepOutput::default(),
                };
                map_output(n.on_event(view, mapped), ProtocolTimer::Csync)
            }
            ProtocolNode::Gtsp(n) => {
                let mapped = match ev {
                    NodeEvent::Boot => NodeEvent::Boot,
                    NodeEvent::Frame(f) => NodeEvent::Frame(f),
                    NodeEvent::Timer(ProtocolTimer::Gtsp(t)) => NodeEvent::Timer(t),
                    NodeEvent::Timer(ProtocolTimer::Csync(_)) => return StepOutput::default(),
                };
                map_output(n.on_event(view, mapped), ProtocolTimer::Gtsp)
            }
        }
    }

    fn mac_stamp(&mut self, view: &HwReading) -> (f64, f64) {
        match self {
            ProtocolNode::Csync(n) => n.mac_stamp(view),
            ProtocolNode::Gtsp(n) => n.mac_stamp(view),
        }
    }

    fn sample(&self, view: &HwReading) -> SampleInfo {
        match self {
            ProtocolNode::Csync(n) => n.sample(view),
            ProtocolNode::Gtsp(n) => n.sample(view),
        }
    }

    fn measure_ready(&self) -> bool {
        match self {
            ProtocolNode::Csync(n) => n.measure_ready(),
            ProtocolNode::Gtsp(n) => n.measure_ready(),
        }
    }

    fn discovery_active(&self) -> bool {
        match self {
            ProtocolNode::Csync(n) => n.discovery_active(),
            ProtocolNode::Gtsp(n) => n.discovery_active(),
        }
    }

    fn cluster_report(&self) -> ClusterReport {
        match self {
            ProtocolNode::Csync(n) => n.cluster_report(),
            ProtocolNode::Gtsp(n) => n.cluster_report(),
        }
    }
}

fn map_output<A, B>(out: StepOutput<A>, wrap: impl Fn(A) -> B) -> StepOutput<B> {
    StepOutput {
        msgs: out.msgs,
        timers: out
            .timers
            .into_iter()
            .map(|t| TimerReq { at_raw_ticks: t.at_raw_ticks, tag: wrap(t.tag) })
            .collect(),
        radio: out.radio,
        notes: out.notes,
    }
}
