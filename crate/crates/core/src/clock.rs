//! Per-node hardware clock simulation and logical clock arithmetic.
//!
//! Each node carries two oscillators: a stable low-frequency crystal (nominal
//! 512 ticks/s after the divider) and a fast but unstable digitally controlled
//! oscillator (nominal 524,288 ticks/s, ~1.9 us resolution) whose drift can
//! reach +/-20%. The crystal samples the DCO in fixed windows (4 crystal ticks
//! correspond to 4096 DCO ticks); the ratio of expected to actual DCO ticks in
//! the last completed window is the drift compensation factor. Multiplying raw
//! DCO progress by that factor yields the node's compensated hardware clock,
//! which runs at crystal accuracy with DCO resolution.
//!
//! On top of the compensated hardware clock sits the logical clock: a rate
//! multiplier plus an additive offset, updated by neighbor averaging during
//! discovery and by reference-rate adoption during consensus synchronization.
//!
//! Conventions: true (simulated wall-clock) time is integer nanoseconds;
//! hardware and logical clock readings are `f64` microseconds.

use alloc::vec::Vec;
use core::fmt;

use crate::{NodeId, SimNs};

/// Nominal DCO frequency in ticks per second.
pub const DCO_FREQ: f64 = 524_288.0;
/// Nominal crystal frequency in ticks per second (32 kHz crystal behind a /64 divider).
pub const CRYSTAL_FREQ: f64 = 512.0;
/// One DCO tick in microseconds (~1.907 us).
pub const DCO_TICK_US: f64 = 1_000_000.0 / DCO_FREQ;
/// Crystal ticks per compensation window.
const WINDOW_CRYSTAL_TICKS: f64 = 4.0;
/// Expected DCO ticks per compensation window at nominal frequencies.
const WINDOW_DCO_TICKS: f64 = DCO_FREQ / CRYSTAL_FREQ * WINDOW_CRYSTAL_TICKS;

/// Errors from clock arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockError {
    /// The DCO produced zero ticks over a sampling window (fail-stop hardware).
    StalledDco,
    /// Two rate-estimation samples share the same receiver timestamp.
    DuplicateTimestamp,
    /// A logical clock rate was not strictly positive.
    NonPositiveRate,
}

impl fmt::Display for ClockError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClockError::StalledDco => write!(f, "DCO stalled: zero ticks in sampling window"),
            ClockError::DuplicateTimestamp => write!(f, "duplicate receiver timestamp in rate samples"),
            ClockError::NonPositiveRate => write!(f, "logical clock rate must be > 0"),
        }
    }
}

impl core::error::Error for ClockError {}

/// DCO drift as a multiplicative factor over true time.
///
/// Factors stay within [0.8, 1.2] (up to 20% drift).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftModel {
    /// Constant factor for the whole run.
    Constant(f64),
    /// Slow sinusoidal variation, e.g. a temperature cycle:
    /// `base + amplitude * sin(2*pi*(t - phase)/period)`.
    Sinusoidal {
        base: f64,
        amplitude: f64,
        period_ns: f64,
        phase_ns: f64,
    },
}

impl DriftModel {
    /// Validates the 20% drift envelope.
    pub fn validate(&self) -> bool {
        match *self {
            DriftModel::Constant(c) => (0.8..=1.2).contains(&c),
            DriftModel::Sinusoidal { base, amplitude, period_ns, .. } => {
                amplitude >= 0.0
                    && period_ns > 0.0
                    && base - amplitude >= 0.8
                    && base + amplitude <= 1.2
            }
        }
    }

    /// Instantaneous drift factor at true time `t_ns`.
    pub fn factor(&self, t_ns: SimNs) -> f64 {
        match *self {
            DriftModel::Constant(c) => c,
            DriftModel::Sinusoidal { base, amplitude, period_ns, phase_ns } => {
                let x = 2.0 * core::f64::consts::PI * ((t_ns as f64) - phase_ns) / period_ns;
                base + amplitude * libm::sin(x)
            }
        }
    }

    /// Integral of the drift factor over `[t0_ns, t1_ns]`, in seconds.
    fn integral_secs(&self, t0_ns: SimNs, t1_ns: SimNs) -> f64 {
        let dt = (t1_ns as f64 - t0_ns as f64) / 1e9;
        match *self {
            DriftModel::Constant(c) => c * dt,
            DriftModel::Sinusoidal { base, amplitude, period_ns, phase_ns } => {
                let w = 2.0 * core::f64::consts::PI / period_ns;
                let a0 = w * ((t0_ns as f64) - phase_ns);
                let a1 = w * ((t1_ns as f64) - phase_ns);
                // integral of sin in ns, converted to seconds
                base * dt + amplitude * (libm::cos(a0) - libm::cos(a1)) / w / 1e9
            }
        }
    }
}

/// The simulated oscillator pair of one node.
///
/// True-time bookkeeping (anchors, drift trajectory) is simulator-side ground
/// truth; everything a node can observe goes through [`HardwareClock::reading`].
#[derive(Debug, Clone)]
pub struct HardwareClock {
    dco_freq: f64,
    crystal_freq: f64,
    /// Crystal frequency error in parts per million.
    crystal_ppm: f64,
    drift: DriftModel,
    /// Initial register contents, as microseconds of pre-run uptime.
    init_us: f64,
    /// Current true time anchor.
    true_ns: SimNs,
    /// Whole DCO ticks already folded into `comp_us`.
    consumed_ticks: u64,
    /// Accumulated compensated reading in microseconds.
    comp_us: f64,
}

impl HardwareClock {
    /// Creates a clock with the given per-node constants.
    ///
    /// `init_us` models boot stagger: the tick registers start as if the node
    /// had already been running for that long.
    pub fn new(crystal_ppm: f64, drift: DriftModel, init_us: f64) -> Self {
        debug_assert!(drift.validate(), "drift factor outside [0.8, 1.2]");
        let mut hw = HardwareClock {
            dco_freq: DCO_FREQ,
            crystal_freq: CRYSTAL_FREQ,
            crystal_ppm,
            drift,
            init_us,
            true_ns: 0,
            consumed_ticks: 0,
            comp_us: 0.0,
        };
        let whole = hw.raw_ticks_at(0) as u64;
        hw.consumed_ticks = whole;
        hw.comp_us = whole as f64 * 1e6 / hw.dco_freq;
        hw
    }

    fn raw_init_ticks(&self) -> f64 {
        self.init_us * self.dco_freq / 1e6
    }

    fn crystal_slope_per_ns(&self) -> f64 {
        self.crystal_freq * (1.0 + self.crystal_ppm * 1e-6) / 1e9
    }

    /// Exact (fractional) DCO tick count at true time `t_ns`.
    fn raw_ticks_at(&self, t_ns: SimNs) -> f64 {
        self.raw_init_ticks() + self.dco_freq * self.drift.integral_secs(0, t_ns)
    }

    /// Exact crystal tick count at true time `t_ns`.
    fn crystal_ticks_at(&self, t_ns: SimNs) -> f64 {
        self.init_us * self.crystal_freq / 1e6 + self.crystal_slope_per_ns() * t_ns as f64
    }

    /// True time at which the crystal reaches `ticks`.
    fn true_ns_for_crystal(&self, ticks: f64) -> f64 {
        (ticks - self.init_us * self.crystal_freq / 1e6) / self.crystal_slope_per_ns()
    }

    /// Drift compensation factor derived from the last completed crystal window.
    ///
    /// Expected window content is 4096 DCO ticks; the factor is
    /// `expected / actual`, i.e. the firmware's `tb_e / tb_a`. Before the first
    /// completed window the clock is uncalibrated and the factor is 1.
    pub fn comp_factor(&self) -> f64 {
        let crystal_now = self.crystal_ticks_at(self.true_ns);
        let k_end = libm::floor(crystal_now / WINDOW_CRYSTAL_TICKS);
        let boot_crystal = self.init_us * self.crystal_freq / 1e6;
        let k_first = libm::ceil(boot_crystal / WINDOW_CRYSTAL_TICKS);
        if k_end < k_first + 1.0 {
            return 1.0;
        }
        let t_end = self.true_ns_for_crystal(k_end * WINDOW_CRYSTAL_TICKS);
        let t_start = self.true_ns_for_crystal((k_end - 1.0) * WINDOW_CRYSTAL_TICKS);
        let actual = self.dco_freq * self.drift.integral_secs(0, t_end.max(0.0) as SimNs)
            - self.dco_freq * self.drift.integral_secs(0, t_start.max(0.0) as SimNs);
        if actual <= 0.0 {
            // cannot happen while drift stays within its envelope
            return 1.0;
        }
        WINDOW_DCO_TICKS / actual
    }

    /// Advances the clock to true time `t_ns`, folding whole elapsed DCO ticks
    /// into the compensated reading. Returns the whole DCO ticks elapsed.
    ///
    /// Tick counters are monotonically non-decreasing; `t_ns` must not move
    /// backwards.
    pub fn advance_to(&mut self, t_ns: SimNs) -> u64 {
        debug_assert!(t_ns >= self.true_ns, "hardware clock advanced backwards");
        self.true_ns = t_ns;
        let whole = self.raw_ticks_at(t_ns) as u64;
        let delta = whole.saturating_sub(self.consumed_ticks);
        if delta > 0 {
            let comp = self.comp_factor();
            self.comp_us += delta as f64 * comp * 1e6 / self.dco_freq;
            self.consumed_ticks = whole;
        }
        delta
    }

    /// Advances by a true-time delta in nanoseconds; returns whole DCO ticks elapsed.
    pub fn advance(&mut self, dt_ns: SimNs) -> u64 {
        self.advance_to(self.true_ns + dt_ns)
    }

    /// The compensated hardware clock reading in microseconds (DCO resolution,
    /// crystal accuracy).
    pub fn reading(&self) -> HwReading {
        HwReading {
            comp_us: self.comp_us,
            raw_ticks: self.consumed_ticks,
            comp_factor: self.comp_factor(),
            tick_us: 1e6 / self.dco_freq,
        }
    }

    /// Current true-time anchor.
    pub fn true_ns(&self) -> SimNs {
        self.true_ns
    }

    /// Raw (uncompensated) whole DCO tick count.
    pub fn raw_ticks(&self) -> u64 {
        self.consumed_ticks
    }

    /// First true time `>= now` at which the raw DCO tick count reaches `target`.
    ///
    /// Used by the engine to convert node timer requests (expressed against
    /// the node's own hardware clock) into simulation event times.
    pub fn true_ns_for_raw_ticks(&self, target: u64) -> SimNs {
        if target <= self.consumed_ticks {
            return self.true_ns;
        }
        let need = target as f64 - self.raw_ticks_at(self.true_ns);
        // drift factor never drops below 0.8; 0.5 leaves margin for the bound
        let mut hi = self.true_ns + ((need / (self.dco_freq * 0.5)) * 1e9) as u64 + 2;
        let mut lo = self.true_ns;
        while self.raw_ticks_at(hi) < target as f64 {
            hi += (hi - lo).max(1_000);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.raw_ticks_at(mid) >= target as f64 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// A snapshot of one node's observable hardware clock state.
#[derive(Debug, Clone, Copy)]
pub struct HwReading {
    /// Compensated hardware clock in microseconds.
    pub comp_us: f64,
    /// Raw DCO tick register.
    pub raw_ticks: u64,
    /// Current drift compensation factor (`tb_e / tb_a`).
    pub comp_factor: f64,
    /// One DCO tick in microseconds.
    pub tick_us: f64,
}

impl HwReading {
    /// Raw tick target whose compensated reading is `target_comp_us`,
    /// as the node firmware would compute it with its current factor.
    pub fn raw_ticks_for_comp_us(&self, target_comp_us: f64) -> u64 {
        if target_comp_us <= self.comp_us {
            return self.raw_ticks;
        }
        let dticks = (target_comp_us - self.comp_us) / (self.tick_us * self.comp_factor);
        self.raw_ticks + libm::ceil(dticks) as u64
    }
}

/// Computes the DCO drift factor from a sampling window: `tb_e / tb_a`.
///
/// Multiplying the current timer-B reading by this factor recovers the ideal
/// tick count. A zero actual count signals a stalled DCO, treated as a
/// fail-stop fault by callers.
pub fn dco_drift_factor(tb_estimated: u64, tb_actual: u64) -> Result<f64, ClockError> {
    if tb_actual == 0 {
        return Err(ClockError::StalledDco);
    }
    Ok(tb_estimated as f64 / tb_actual as f64)
}

/// One neighbor observation used for averaging updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborSample {
    pub neighbor_id: NodeId,
    /// Neighbor's advertised logical clock at its MAC timestamp, microseconds.
    pub neighbor_logical: f64,
    /// Neighbor's logical rate expressed against the receiver's hardware clock
    /// (the differential relative-rate estimate once two observations exist,
    /// the advertised rate before that).
    pub neighbor_rate: f64,
    /// Receiver's compensated hardware clock at reception, microseconds.
    pub rx_hw_us: f64,
}

/// Outcome of an averaging update, used by the discovery synchronization gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageOutcome {
    /// Offset correction applied to the logical clock, microseconds.
    pub offset_applied: f64,
    /// Rate after the update.
    pub new_rate: f64,
    /// Largest absolute single-neighbor offset among the samples, microseconds.
    pub max_abs_neighbor_offset: f64,
    /// Largest relative deviation of a sample rate from the updated rate.
    pub max_rel_rate_spread: f64,
}

/// The logical clock: compensated hardware time scaled by a rate and shifted
/// by an accumulated offset.
///
/// Reads accumulate `L += dh * rate` piecewise between updates; offsets apply
/// atomically at update instants while rate changes take effect from the next
/// accumulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogicalClock {
    rate: f64,
    /// Cumulative applied offset, microseconds.
    offset: f64,
    /// Logical value at the last commit point, microseconds.
    last_logical: f64,
    /// Compensated hardware reading at the last commit point, microseconds.
    last_hw: f64,
}

impl LogicalClock {
    /// A fresh logical clock equal to the hardware clock (discovery state).
    pub fn new(hw_us: f64) -> Self {
        LogicalClock { rate: 1.0, offset: 0.0, last_logical: hw_us, last_hw: hw_us }
    }

    /// Current logical time at compensated hardware reading `hw_us`.
    pub fn now(&self, hw_us: f64) -> f64 {
        self.last_logical + (hw_us - self.last_hw) * self.rate
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Cumulative offset applied so far.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    fn commit(&mut self, hw_us: f64) {
        self.last_logical = self.now(hw_us);
        self.last_hw = hw_us;
    }

    /// Sets a new rate; takes effect for accumulation after `hw_us`.
    pub fn set_rate(&mut self, hw_us: f64, rate: f64) -> Result<(), ClockError> {
        if !(rate > 0.0) {
            return Err(ClockError::NonPositiveRate);
        }
        self.commit(hw_us);
        self.rate = rate;
        Ok(())
    }

    /// Applies an offset correction once, at the current instant.
    pub fn apply_offset(&mut self, hw_us: f64, delta_us: f64) {
        self.commit(hw_us);
        self.last_logical += delta_us;
        self.offset += delta_us;
    }

    /// Jumps the logical clock to `target_us` at the current instant.
    pub fn jump_to(&mut self, hw_us: f64, target_us: f64) {
        let delta = target_us - self.now(hw_us);
        self.apply_offset(hw_us, delta);
    }

    /// Neighbor-averaging update of rate and offset.
    ///
    /// With `n` samples the new rate is `(sum l_j + l_i) / (n + 1)` and the
    /// offset moves by `sum (L_j - L_i) / (n + 1)`, each neighbor value
    /// extrapolated from its reception instant to `hw_us`. Empty input leaves
    /// the clock unchanged.
    pub fn average_update(&mut self, hw_us: f64, samples: &[NeighborSample]) -> AverageOutcome {
        if samples.is_empty() {
            return AverageOutcome {
                offset_applied: 0.0,
                new_rate: self.rate,
                max_abs_neighbor_offset: 0.0,
                max_rel_rate_spread: 0.0,
            };
        }
        let own = self.now(hw_us);
        let n1 = (samples.len() + 1) as f64;
        let mut rate_sum = self.rate;
        let mut offset_sum = 0.0;
        let mut max_abs = 0.0f64;
        for s in samples {
            let neighbor_now = s.neighbor_logical + (hw_us - s.rx_hw_us) * s.neighbor_rate;
            let delta = neighbor_now - own;
            offset_sum += delta;
            rate_sum += s.neighbor_rate;
            if libm::fabs(delta) > max_abs {
                max_abs = libm::fabs(delta);
            }
        }
        let new_rate = rate_sum / n1;
        let offset_delta = offset_sum / n1;
        let mut max_spread = 0.0f64;
        for s in samples {
            let rel = libm::fabs(s.neighbor_rate / new_rate - 1.0);
            if rel > max_spread {
                max_spread = rel;
            }
        }
        self.commit(hw_us);
        self.last_logical += offset_delta;
        self.offset += offset_delta;
        self.rate = new_rate;
        AverageOutcome {
            offset_applied: offset_delta,
            new_rate,
            max_abs_neighbor_offset: max_abs,
            max_rel_rate_spread: max_spread,
        }
    }
}

/// Relative clock rate of the receiver with respect to a sender, from two
/// successive observations `(sender_logical, receiver_hw)`.
///
/// Uses the differential form `dL_s / dh_r`: absolute ratios are meaningless
/// across nodes booted at different times.
pub fn relative_rate(prev: (f64, f64), curr: (f64, f64)) -> Result<f64, ClockError> {
    let dh = curr.1 - prev.1;
    if dh <= 0.0 {
        return Err(ClockError::DuplicateTimestamp);
    }
    Ok((curr.0 - prev.0) / dh)
}

/// Logical clock rate referenced to the local center: `l_rs / l_r`.
pub fn lc_referenced_rate(l_rs: f64, l_r: f64) -> Result<f64, ClockError> {
    if !(l_r > 0.0) {
        return Err(ClockError::NonPositiveRate);
    }
    Ok(l_rs / l_r)
}

/// Largest believable disagreement between a differential rate estimate and
/// the sender's advertised rate. Honest hardware differs by tens of ppm;
/// anything bigger means the estimation window straddles a timeline jump.
pub const RATE_ESTIMATE_GUARD: f64 = 1e-3;

/// Per-neighbor observation history: latest advertised values plus the
/// previous pair needed for differential rate estimation.
#[derive(Debug, Clone, Copy)]
pub struct NeighborObservation {
    pub advertised_logical: f64,
    pub advertised_rate: f64,
    pub rx_hw_us: f64,
    prev: Option<(f64, f64)>,
    est_rel_rate: Option<f64>,
}

/// Tracks neighbor time observations for averaging-based protocols.
#[derive(Debug, Clone, Default)]
pub struct NeighborTracker {
    map: alloc::collections::BTreeMap<NodeId, NeighborObservation>,
}

impl NeighborTracker {
    /// Records a received beacon. The relative-rate estimate refreshes once
    /// two observations span at least `min_baseline_us` of receiver time.
    ///
    /// The sender's advertised timeline jumps whenever it applies an offset
    /// correction, and differencing across such a jump would give a wild
    /// estimate. A window is therefore accepted only when its differential
    /// rate agrees with the sender's advertised rate to within
    /// [`RATE_ESTIMATE_GUARD`]; otherwise the estimate is dropped and the
    /// baseline restarts past the jump.
    pub fn observe(&mut self, src: NodeId, logical: f64, rate: f64, rx_hw_us: f64, min_baseline_us: f64) {
        match self.map.get_mut(&src) {
            Some(o) => {
                let anchor = o.prev.unwrap_or((o.advertised_logical, o.rx_hw_us));
                if rx_hw_us - anchor.1 >= min_baseline_us {
                    if let Ok(est) = relative_rate(anchor, (logical, rx_hw_us)) {
                        if libm::fabs(est - rate) <= RATE_ESTIMATE_GUARD {
                            o.est_rel_rate = Some(est);
                        } else {
                            o.est_rel_rate = None;
                        }
                    }
                    o.prev = Some((logical, rx_hw_us));
                } else if o.prev.is_none() {
                    o.prev = Some((o.advertised_logical, o.rx_hw_us));
                }
                o.advertised_logical = logical;
                o.advertised_rate = rate;
                o.rx_hw_us = rx_hw_us;
            }
            None => {
                self.map.insert(
                    src,
                    NeighborObservation {
                        advertised_logical: logical,
                        advertised_rate: rate,
                        rx_hw_us,
                        prev: None,
                        est_rel_rate: None,
                    },
                );
            }
        }
    }

    /// Samples for an averaging update: one entry per neighbor heard within
    /// `max_age_us` of receiver hardware time, rate backed by the relative
    /// estimate when available.
    pub fn samples(&self, now_hw_us: f64, max_age_us: f64) -> Vec<NeighborSample> {
        self.map
            .iter()
            .filter(|(_, o)| now_hw_us - o.rx_hw_us <= max_age_us)
            .map(|(&id, o)| NeighborSample {
                neighbor_id: id,
                neighbor_logical: o.advertised_logical,
                neighbor_rate: o.est_rel_rate.unwrap_or(o.advertised_rate),
                rx_hw_us: o.rx_hw_us,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.map.contains_key(&id)
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    /// Drops one neighbor's history, e.g. when its timeline jumped and
    /// differencing across the jump would poison the rate estimate.
    pub fn reset(&mut self, id: NodeId) {
        self.map.remove(&id);
    }
}

/// Iterates synchronous averaging rounds over a complete graph of rates;
/// test oracle for the consensus-averaging fixed point.
pub fn averaging_fixed_point(initial_rates: &[f64], rounds: usize) -> Vec<f64> {
    let mut rates: Vec<f64> = initial_rates.into();
    let n = rates.len();
    for _ in 0..rounds {
        let prev = rates.clone();
        for i in 0..n {
            let mut sum = prev[i];
            for (j, r) in prev.iter().enumerate() {
                if j != i {
                    sum += *r;
                }
            }
            rates[i] = sum / n as f64;
        }
    }
    rates
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal(init_us: f64) -> HardwareClock {
        HardwareClock::new(0.0, DriftModel::Constant(1.0), init_us)
    }

    #[test]
    fn advance_zero_elapses_zero_ticks() {
        let mut hw = nominal(0.0);
        assert_eq!(hw.advance(0), 0);
    }

    #[test]
    fn advance_one_second_nominal_is_dco_freq() {
        let mut hw = nominal(0.0);
        assert_eq!(hw.advance(crate::secs(1)), 524_288);
    }

    #[test]
    fn advance_one_second_with_drift() {
        // 524288 * 0.953125 = 499712 exactly
        let mut hw = HardwareClock::new(0.0, DriftModel::Constant(0.953125), 0.0);
        assert_eq!(hw.advance(crate::secs(1)), 499_712);
    }

    #[test]
    fn ticks_monotone_under_split_advances() {
        let mut a = HardwareClock::new(12.0, DriftModel::Constant(1.07), 5.0);
        let mut b = a.clone();
        let whole = a.advance(crate::ms(700));
        let mut split = b.advance(crate::ms(333));
        split += b.advance(crate::ms(367));
        assert_eq!(whole, split);
        assert_eq!(a.raw_ticks(), b.raw_ticks());
    }

    #[test]
    fn compensation_recovers_true_rate() {
        // with 10% drift, compensated reading should track true time at
        // crystal accuracy once calibration windows complete
        let mut hw = HardwareClock::new(0.0, DriftModel::Constant(1.1), 0.0);
        hw.advance(crate::secs(10));
        let r = hw.reading();
        assert!((r.comp_us - 10_000_000.0).abs() < 10.0, "comp_us = {}", r.comp_us);
        assert!((r.comp_factor - 1.0 / 1.1).abs() < 1e-3);
    }

    #[test]
    fn crystal_ppm_skews_compensated_clock() {
        let mut hw = HardwareClock::new(40.0, DriftModel::Constant(0.95), 0.0);
        hw.advance(crate::secs(100));
        let r = hw.reading();
        // +40 ppm over 100 s = +4000 us
        let err = r.comp_us - 100_000_000.0;
        assert!((err - 4_000.0).abs() < 50.0, "err = {err}");
    }

    #[test]
    fn timer_inversion_round_trips() {
        let mut hw = HardwareClock::new(-25.0, DriftModel::Constant(1.08), 321.0);
        hw.advance(crate::ms(5));
        let target = hw.raw_ticks() + 52_429; // ~0.1 s of ticks
        let t = hw.true_ns_for_raw_ticks(target);
        let mut probe = hw.clone();
        probe.advance_to(t);
        assert!(probe.raw_ticks() >= target);
        let mut before = hw.clone();
        before.advance_to(t - 1);
        assert!(before.raw_ticks() < target);
    }

    #[test]
    fn dco_drift_factor_examples() {
        // 4096/3904 = 1.04918...
        let f = dco_drift_factor(4096, 3904).unwrap();
        assert!((f - 1.04918).abs() < 1e-5);
        assert_eq!(dco_drift_factor(4096, 4096).unwrap(), 1.0);
        let g = dco_drift_factor(4096, 4300).unwrap();
        assert!((g - 0.95256).abs() < 1e-5);
        assert_eq!(dco_drift_factor(4096, 0), Err(ClockError::StalledDco));
    }

    #[test]
    fn drift_factor_roundtrip_within_ulp() {
        for (e, a) in [(4096u64, 3904u64), (4096, 4300), (1, 7), (1_000_003, 999_983)] {
            let f = dco_drift_factor(e, a).unwrap();
            let back = f * a as f64;
            assert!((back - e as f64).abs() <= (e as f64) * f64::EPSILON);
        }
    }

    #[test]
    fn logical_now_examples() {
        let mut lc = LogicalClock::new(0.0);
        assert_eq!(lc.now(1000.0), 1000.0);

        lc.set_rate(1000.0, 1.05).unwrap();
        assert!((lc.now(2000.0) - 2050.0).abs() < 1e-9);

        let mut lc2 = LogicalClock::new(0.0);
        lc2.apply_offset(500.0, -30.0);
        assert_eq!(lc2.now(500.0), 470.0);
        // offset applies once, not per read
        assert_eq!(lc2.now(500.0), 470.0);
    }

    #[test]
    fn rate_change_applies_from_next_advance() {
        let mut lc = LogicalClock::new(0.0);
        lc.set_rate(1000.0, 1.1).unwrap();
        // the first 1000 us accumulated at rate 1.0
        assert!((lc.now(1000.0) - 1000.0).abs() < 1e-9);
        assert!((lc.now(2000.0) - 2100.0).abs() < 1e-9);
    }

    #[test]
    fn average_update_examples() {
        let mut lc = LogicalClock::new(0.0);
        let before = lc;
        let out = lc.average_update(100.0, &[]);
        assert_eq!(lc, before);
        assert_eq!(out.offset_applied, 0.0);

        // one neighbor with rate 1.2 -> (1.2 + 1.0)/2 = 1.1
        let mut lc = LogicalClock::new(0.0);
        let s = NeighborSample {
            neighbor_id: NodeId(2),
            neighbor_logical: 100.0,
            neighbor_rate: 1.2,
            rx_hw_us: 100.0,
        };
        let out = lc.average_update(100.0, &[s]);
        assert!((out.new_rate - 1.1).abs() < 1e-12);

        // offsets {1100, 1300} against own 1000 -> +400/3
        let mut lc = LogicalClock::new(0.0);
        let hw = 1000.0;
        assert_eq!(lc.now(hw), 1000.0);
        let samples = [
            NeighborSample { neighbor_id: NodeId(2), neighbor_logical: 1100.0, neighbor_rate: 1.0, rx_hw_us: hw },
            NeighborSample { neighbor_id: NodeId(3), neighbor_logical: 1300.0, neighbor_rate: 1.0, rx_hw_us: hw },
        ];
        let out = lc.average_update(hw, &samples);
        assert!((out.offset_applied - 400.0 / 3.0).abs() < 1e-9);
        assert!((lc.now(hw) - (1000.0 + 400.0 / 3.0)).abs() < 1e-9);
        assert!((lc.offset() - 133.3333333).abs() < 1e-6);
    }

    #[test]
    fn average_update_identity_when_samples_match_own() {
        let mut lc = LogicalClock::new(0.0);
        lc.set_rate(0.0, 1.03).unwrap();
        let hw = 2500.0;
        let own = lc.now(hw);
        let samples = [
            NeighborSample { neighbor_id: NodeId(7), neighbor_logical: own, neighbor_rate: 1.03, rx_hw_us: hw },
            NeighborSample { neighbor_id: NodeId(8), neighbor_logical: own, neighbor_rate: 1.03, rx_hw_us: hw },
        ];
        let out = lc.average_update(hw, &samples);
        assert!(out.offset_applied.abs() < 1e-12);
        assert!((out.new_rate - 1.03).abs() < 1e-12);
        assert!((lc.now(hw) - own).abs() < 1e-12);
    }

    #[test]
    fn relative_rate_examples() {
        assert_eq!(relative_rate((0.0, 0.0), (1000.0, 1000.0)).unwrap(), 1.0);
        let r = relative_rate((500.0, 500.0), (1550.0, 1500.0)).unwrap();
        assert!((r - 1.05).abs() < 1e-12);
        assert_eq!(
            relative_rate((500.0, 500.0), (1500.0, 500.0)),
            Err(ClockError::DuplicateTimestamp)
        );
    }

    #[test]
    fn lc_referenced_rate_examples() {
        assert_eq!(lc_referenced_rate(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(lc_referenced_rate(1.05, 1.05).unwrap(), 1.0);
        let r = lc_referenced_rate(1.10, 1.05).unwrap();
        assert!((r - 1.047619).abs() < 1e-6);
        assert_eq!(lc_referenced_rate(1.0, 0.0), Err(ClockError::NonPositiveRate));
        assert_eq!(lc_referenced_rate(1.0, -0.5), Err(ClockError::NonPositiveRate));
    }

    #[test]
    fn averaging_converges_to_mean_on_complete_graphs() {
        for rates in [
            &[0.98, 1.02][..],
            &[0.9, 1.0, 1.1][..],
            &[1.2, 0.8, 1.05, 0.95, 1.0][..],
        ] {
            let mean = rates.iter().sum::<f64>() / rates.len() as f64;
            let out = averaging_fixed_point(rates, 60);
            for r in out {
                assert!((r - mean).abs() < 1e-6, "rate {r} vs mean {mean}");
            }
        }
    }

    #[test]
    fn logical_now_split_interval_invariance() {
        let mut one = LogicalClock::new(0.0);
        one.set_rate(0.0, 1.07).unwrap();
        let mut two = one;
        // one jump of 900 vs 400 + 500 with a commit in between
        let a = one.now(900.0);
        two.apply_offset(400.0, 0.0); // commit without change
        let b = two.now(900.0);
        assert!((a - b).abs() < 1e-9);
    }
}
