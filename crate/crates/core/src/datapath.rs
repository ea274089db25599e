//! Behavioral model of the hybrid junction / CMOS / MRAM system.
//!
//! One operation runs a finite state machine through seven states:
//!
//! | state | work |
//! |-------|------|
//! | S0 | clocked comparators count input switching events into 8-bit counters |
//! | S1 | sequential fixed-point multiply-accumulate of counters and weights |
//! | S2 | output junctions are driven at the computed rates and counted |
//! | S3 | the output value is decoded from the output counters |
//! | S4 | the learning direction of every output column is computed |
//! | S5 | new weights are computed from the stored ones |
//! | S6 | changed MRAM bits are written back |
//!
//! S4 to S6 only run when learning is enabled. Every event is charged to a
//! [`CostLedger`] through per-event energy constants.

use alloc::vec::Vec;
use rand::Rng;

use crate::device::invert_rate;
use crate::energy::{population_power, EnergyConfig, StimulusPower};
use crate::error::{check_len, check_positive, Error, Result};
use crate::learning::{trial_direction, CurvePoint, Direction, ErrorStats, InversionModel, LearningCurve, Transform, WeightMatrix};
use crate::population::{build_population, Population, VariabilitySpec};
use crate::rng::{purpose, StreamKey};

/// Signed 8-bit fixed-point number, `raw / 2^frac_bits`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FixedPoint8 {
    raw: i8,
    frac_bits: u8,
}

/// Largest magnitude of a raw value. The range is kept symmetric.
pub const RAW_MAX: i32 = 127;

fn saturate(v: i64) -> (i8, bool) {
    if v > RAW_MAX as i64 {
        (RAW_MAX as i8, true)
    } else if v < -RAW_MAX as i64 {
        (-RAW_MAX as i8, true)
    } else {
        (v as i8, false)
    }
}

/// `num / den` rounded to nearest, ties away from zero. `den > 0`.
fn div_round(num: i64, den: i64) -> i64 {
    if num >= 0 {
        (num + den / 2) / den
    } else {
        -((-num + den / 2) / den)
    }
}

impl FixedPoint8 {
    pub fn new(raw: i8, frac_bits: u8) -> Result<Self> {
        if frac_bits > 7 {
            return Err(Error::InvalidParameter { name: "frac_bits", reason: "must be at most 7" });
        }
        let (raw, _) = saturate(raw as i64);
        Ok(FixedPoint8 { raw, frac_bits })
    }

    /// Round to nearest; the flag reports saturation.
    pub fn from_f64(x: f64, frac_bits: u8) -> Result<(Self, bool)> {
        if frac_bits > 7 {
            return Err(Error::InvalidParameter { name: "frac_bits", reason: "must be at most 7" });
        }
        if x.is_nan() {
            return Err(Error::InvalidParameter { name: "x", reason: "must not be NaN" });
        }
        let scaled = libm::round(x * (1u32 << frac_bits) as f64);
        let clamped = scaled.clamp(-(RAW_MAX as f64), RAW_MAX as f64);
        Ok((FixedPoint8 { raw: clamped as i8, frac_bits }, clamped != scaled))
    }

    pub fn raw(self) -> i8 {
        self.raw
    }

    pub fn frac_bits(self) -> u8 {
        self.frac_bits
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 / (1u32 << self.frac_bits) as f64
    }

    pub fn ulp(frac_bits: u8) -> f64 {
        1.0 / (1u32 << frac_bits) as f64
    }

    pub fn max_value(frac_bits: u8) -> f64 {
        RAW_MAX as f64 * Self::ulp(frac_bits)
    }

    pub fn saturating_add(self, other: Self) -> (Self, bool) {
        debug_assert_eq!(self.frac_bits, other.frac_bits);
        let (raw, sat) = saturate(self.raw as i64 + other.raw as i64);
        (FixedPoint8 { raw, ..self }, sat)
    }

    pub fn saturating_mul(self, other: Self) -> (Self, bool) {
        debug_assert_eq!(self.frac_bits, other.frac_bits);
        let p = div_round(self.raw as i64 * other.raw as i64, 1i64 << self.frac_bits);
        let (raw, sat) = saturate(p);
        (FixedPoint8 { raw, ..self }, sat)
    }
}

/// 8-bit event counter that sticks at 255.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Counter8(u8);

impl Counter8 {
    pub fn new() -> Self {
        Counter8(0)
    }

    pub fn count(self) -> u8 {
        self.0
    }

    /// Returns `false` once the counter is saturated.
    pub fn increment(&mut self) -> bool {
        match self.0.checked_add(1) {
            Some(c) => {
                self.0 = c;
                true
            }
            None => false,
        }
    }

    /// Add `n` events; returns how many were lost to saturation.
    pub fn add(&mut self, n: u32) -> u32 {
        let room = (u8::MAX - self.0) as u32;
        let taken = n.min(room);
        self.0 += taken as u8;
        n - taken
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FsmState {
    S0,
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
}

impl FsmState {
    pub fn index(self) -> usize {
        self as usize
    }

    fn may_follow(self, next: FsmState) -> bool {
        use FsmState::*;
        matches!((self, next), (S0, S1) | (S1, S2) | (S2, S3) | (S3, S4) | (S3, S0) | (S4, S5) | (S5, S6) | (S6, S0))
    }
}

/// Controller enforcing the legal state sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fsm {
    state: FsmState,
    visits: [u64; 7],
}

impl Default for Fsm {
    fn default() -> Self {
        Fsm { state: FsmState::S0, visits: [0; 7] }
    }
}

impl Fsm {
    pub fn state(&self) -> FsmState {
        self.state
    }

    /// How many times each state has been entered.
    pub fn visits(&self) -> [u64; 7] {
        self.visits
    }

    /// Start an operation: count the S0 acquisition window.
    pub fn begin(&mut self) -> Result<()> {
        if self.state != FsmState::S0 {
            return Err(Error::IllegalTransition { from: self.state as u8, to: 0 });
        }
        self.visits[0] += 1;
        Ok(())
    }

    pub fn go(&mut self, next: FsmState) -> Result<()> {
        if !self.state.may_follow(next) {
            return Err(Error::IllegalTransition { from: self.state as u8, to: next as u8 });
        }
        self.state = next;
        if next != FsmState::S0 {
            self.visits[next.index()] += 1;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Acquire,
    Compute,
    Learn,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Acquire, Phase::Compute, Phase::Learn];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Acquire => "acquire",
            Phase::Compute => "compute",
            Phase::Learn => "learn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Technology {
    Junction,
    Cmos,
    Mram,
}

impl Technology {
    pub const ALL: [Technology; 3] = [Technology::Junction, Technology::Cmos, Technology::Mram];

    pub fn name(self) -> &'static str {
        match self {
            Technology::Junction => "junction",
            Technology::Cmos => "cmos",
            Technology::Mram => "mram",
        }
    }
}

/// Per-event energies in joules and block areas in um^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostConfig {
    pub e_comparator_cycle: f64,
    pub e_mac: f64,
    pub e_mram_read_bit: f64,
    pub e_mram_write_bit: f64,
    pub e_counter_tick: f64,
    pub area_cmos: f64,
    pub area_mram: f64,
    pub area_junctions: f64,
}

impl Default for CostConfig {
    /// Constants calibrated on the 128 x 128 reference system.
    fn default() -> Self {
        CostConfig {
            e_comparator_cycle: 5.0e-16,
            e_mac: 2.892e-13,
            e_mram_read_bit: 1.728e-14,
            e_mram_write_bit: 7.004e-11,
            e_counter_tick: 1.0e-15,
            area_cmos: 10_400.0,
            area_mram: 1_600.0,
            area_junctions: 0.05,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("e_comparator_cycle", self.e_comparator_cycle),
            ("e_mac", self.e_mac),
            ("e_mram_read_bit", self.e_mram_read_bit),
            ("e_mram_write_bit", self.e_mram_write_bit),
            ("e_counter_tick", self.e_counter_tick),
            ("area_cmos", self.area_cmos),
            ("area_mram", self.area_mram),
            ("area_junctions", self.area_junctions),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter { name, reason: "costs must be finite and non-negative" });
            }
        }
        Ok(())
    }

    pub fn total_area(&self) -> f64 {
        self.area_cmos + self.area_mram + self.area_junctions
    }
}

/// Events accumulated in one phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EventCounts {
    pub comparator_cycles: u64,
    pub counter_ticks: u64,
    pub macs: u64,
    pub mram_read_bits: u64,
    pub mram_write_bits: u64,
    /// Bits an always-write memory would have programmed.
    pub naive_write_bits: u64,
    /// Saturated arithmetic results and counters.
    pub overflows: u64,
    /// Physical energy drawn by the junctions, J.
    pub junction_energy: f64,
}

impl EventCounts {
    fn merge(&mut self, o: &EventCounts) {
        self.comparator_cycles += o.comparator_cycles;
        self.counter_ticks += o.counter_ticks;
        self.macs += o.macs;
        self.mram_read_bits += o.mram_read_bits;
        self.mram_write_bits += o.mram_write_bits;
        self.naive_write_bits += o.naive_write_bits;
        self.overflows += o.overflows;
        self.junction_energy += o.junction_energy;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostLedger {
    costs: CostConfig,
    phases: [EventCounts; 3],
    operations: u64,
}

impl CostLedger {
    pub fn new(costs: CostConfig) -> Result<Self> {
        costs.validate()?;
        Ok(CostLedger { costs, phases: [EventCounts::default(); 3], operations: 0 })
    }

    pub fn costs(&self) -> &CostConfig {
        &self.costs
    }

    pub fn operations(&self) -> u64 {
        self.operations
    }

    pub fn events(&self, phase: Phase) -> &EventCounts {
        &self.phases[phase as usize]
    }

    pub fn events_mut(&mut self, phase: Phase) -> &mut EventCounts {
        &mut self.phases[phase as usize]
    }

    pub fn total_events(&self) -> EventCounts {
        let mut all = EventCounts::default();
        for p in &self.phases {
            all.merge(p);
        }
        all
    }

    pub fn energy(&self, phase: Phase, tech: Technology) -> f64 {
        let e = self.events(phase);
        let c = &self.costs;
        match tech {
            Technology::Junction => e.junction_energy,
            Technology::Cmos => {
                e.comparator_cycles as f64 * c.e_comparator_cycle + e.counter_ticks as f64 * c.e_counter_tick + e.macs as f64 * c.e_mac
            }
            Technology::Mram => e.mram_read_bits as f64 * c.e_mram_read_bit + e.mram_write_bits as f64 * c.e_mram_write_bit,
        }
    }

    pub fn total_energy(&self) -> f64 {
        Phase::ALL.iter().flat_map(|&p| Technology::ALL.iter().map(move |&t| (p, t))).map(|(p, t)| self.energy(p, t)).sum()
    }

    /// Per-operation averages of the accumulated energy.
    pub fn report(&self) -> EnergyReport {
        let ops = self.operations.max(1) as f64;
        let mut energy = [[0.0; 3]; 3];
        for (i, &p) in Phase::ALL.iter().enumerate() {
            for (j, &t) in Technology::ALL.iter().enumerate() {
                energy[i][j] = self.energy(p, t) / ops;
            }
        }
        let c = &self.costs;
        EnergyReport { operations: self.operations, energy, area: [c.area_junctions, c.area_cmos, c.area_mram] }
    }
}

/// Energy per operation by phase and technology, plus block areas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    pub operations: u64,
    /// `energy[phase][technology]` in J per operation.
    pub energy: [[f64; 3]; 3],
    /// um^2, ordered like [`Technology::ALL`].
    pub area: [f64; 3],
}

impl EnergyReport {
    pub fn total(&self) -> f64 {
        self.energy.iter().flatten().sum()
    }

    pub fn phase(&self, phase: Phase) -> f64 {
        self.energy[phase as usize].iter().sum()
    }

    pub fn technology(&self, tech: Technology) -> f64 {
        self.energy.iter().map(|row| row[tech as usize]).sum()
    }

    pub fn total_area(&self) -> f64 {
        self.area.iter().sum()
    }
}

/// Weight array as stored in the MRAM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedWeights {
    n_in: usize,
    n_out: usize,
    frac_bits: u8,
    raw: Vec<i8>,
}

impl FixedWeights {
    /// Quantize `w / scale`. Returns the array and the number of saturated entries.
    pub fn from_float(w: &WeightMatrix, scale: f64, frac_bits: u8) -> Result<(Self, usize)> {
        check_positive("weight_scale", scale)?;
        let mut saturated = 0;
        let mut raw = Vec::with_capacity(w.entries().len());
        for &x in w.entries() {
            let (q, sat) = FixedPoint8::from_f64(x / scale, frac_bits)?;
            saturated += sat as usize;
            raw.push(q.raw());
        }
        Ok((FixedWeights { n_in: w.n_in(), n_out: w.n_out(), frac_bits, raw }, saturated))
    }

    pub fn from_raw(n_in: usize, n_out: usize, frac_bits: u8, raw: Vec<i8>) -> Result<Self> {
        check_len(n_in * n_out, raw.len())?;
        FixedPoint8::new(0, frac_bits)?;
        let raw = raw.into_iter().map(|r| saturate(r as i64).0).collect();
        Ok(FixedWeights { n_in, n_out, frac_bits, raw })
    }

    pub fn to_float(&self, scale: f64) -> WeightMatrix {
        let ulp = FixedPoint8::ulp(self.frac_bits);
        let entries = self.raw.iter().map(|&r| r as f64 * ulp * scale).collect();
        WeightMatrix::from_entries(self.n_in, self.n_out, entries).expect("dims are consistent")
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn frac_bits(&self) -> u8 {
        self.frac_bits
    }

    pub fn raw(&self) -> &[i8] {
        &self.raw
    }

    pub fn get(&self, i: usize, j: usize) -> FixedPoint8 {
        FixedPoint8 { raw: self.raw[i * self.n_out + j], frac_bits: self.frac_bits }
    }
}

/// Integer accumulators of the compute phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComputeResult {
    /// `sum_i raw_ij * count_i`, in units of one weight ulp times one event.
    pub acc: Vec<i32>,
    pub overflows: u32,
}

/// Sequential multiply-accumulate of counters against the weight array.
pub fn compute_phase(counters: &[Counter8], w: &FixedWeights, ledger: &mut CostLedger) -> Result<ComputeResult> {
    check_len(w.n_in, counters.len())?;
    let mut acc = alloc::vec![0i32; w.n_out];
    let mut overflows = 0;
    for (j, a) in acc.iter_mut().enumerate() {
        for (i, c) in counters.iter().enumerate() {
            let prod = w.raw[i * w.n_out + j] as i32 * c.count() as i32;
            match a.checked_add(prod) {
                Some(v) => *a = v,
                None => {
                    *a = if prod > 0 { i32::MAX } else { i32::MIN };
                    overflows += 1;
                }
            }
        }
    }
    let e = ledger.events_mut(Phase::Compute);
    let n = (w.n_in * w.n_out) as u64;
    e.macs += n;
    e.mram_read_bits += 8 * n;
    e.overflows += overflows as u64;
    Ok(ComputeResult { acc, overflows })
}

/// Worst-case gap, in weight units times events, between the fixed-point
/// accumulator and the same sum with unquantized weights: each weight is
/// at most half an ulp away from its stored value.
pub fn quantization_bound(counters: &[Counter8], frac_bits: u8) -> f64 {
    counters.iter().map(|c| c.count() as f64).sum::<f64>() * FixedPoint8::ulp(frac_bits) / 2.0
}

/// Integer constants of the fixed-point learning rule.
///
/// An update of raw weight `q` with `c` input events is
/// `(q * 2^16 +/- c * step_q) * inv_q / 2^32`, rounded to nearest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LearnConstants {
    /// `alpha * 2^(frac_bits + 16) / (counts_at_f0 * weight_scale)`.
    pub step_q: i64,
    /// `2^16 / (1 + alpha)`.
    pub inv_q: i64,
}

impl LearnConstants {
    /// `counts_at_f0` is the number of events a junction at its natural rate
    /// produces in one acquisition window.
    pub fn new(alpha: f64, counts_at_f0: f64, weight_scale: f64, frac_bits: u8) -> Result<Self> {
        check_positive("alpha", alpha)?;
        check_positive("counts_at_f0", counts_at_f0)?;
        check_positive("weight_scale", weight_scale)?;
        let step = alpha * (1u64 << (frac_bits as u32 + 16)) as f64 / (counts_at_f0 * weight_scale);
        let inv = 65536.0 / (1.0 + alpha);
        Ok(LearnConstants { step_q: libm::round(step) as i64, inv_q: libm::round(inv) as i64 })
    }

    /// One weight update; the flag reports saturation.
    pub fn update(&self, raw: i8, count: u8, dir: Direction) -> (i8, bool) {
        let push = count as i64 * self.step_q;
        let base = (raw as i64) << 16;
        let num = match dir {
            Direction::Increase => base + push,
            Direction::Decrease => base - push,
            Direction::Hold => return (raw, false),
        };
        saturate(div_round(num * self.inv_q, 1i64 << 32))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WriteStats {
    pub write_bits: u64,
    pub naive_bits: u64,
    pub changed: u64,
    pub overflows: u64,
}

/// Fixed-point learning update with read-before-write programming.
pub fn learn_phase(
    counters: &[Counter8],
    directions: &[Direction],
    w: &mut FixedWeights,
    k: &LearnConstants,
    ledger: &mut CostLedger,
) -> Result<WriteStats> {
    check_len(w.n_in, counters.len())?;
    check_len(w.n_out, directions.len())?;
    let mut stats = WriteStats::default();
    let active = directions.iter().filter(|&&d| d != Direction::Hold).count() as u64;
    for (i, c) in counters.iter().enumerate() {
        for (j, &d) in directions.iter().enumerate() {
            if d == Direction::Hold {
                continue;
            }
            let idx = i * w.n_out + j;
            let old = w.raw[idx];
            let (new, sat) = k.update(old, c.count(), d);
            stats.overflows += sat as u64;
            let diff = ((old as u8) ^ (new as u8)).count_ones() as u64;
            stats.write_bits += diff;
            stats.changed += (diff > 0) as u64;
            w.raw[idx] = new;
        }
    }
    let touched = w.n_in as u64 * active;
    stats.naive_bits = 8 * touched;
    let e = ledger.events_mut(Phase::Learn);
    e.macs += touched;
    e.mram_read_bits += 8 * touched;
    e.mram_write_bits += stats.write_bits;
    e.naive_write_bits += stats.naive_bits;
    e.overflows += stats.overflows;
    Ok(stats)
}

/// Counters of one clocked acquisition window.
#[derive(Clone, Debug, PartialEq)]
pub struct Acquisition {
    pub counters: Vec<Counter8>,
    /// Switches that really happened, before clock sampling and saturation.
    pub exact: Vec<u32>,
    /// Events the comparators saw but the counters could not hold.
    pub saturated: u32,
}

impl Acquisition {
    /// Fraction of true switches missed by the clocked comparators.
    pub fn sampling_loss(&self) -> f64 {
        let exact: u64 = self.exact.iter().map(|&e| e as u64).sum();
        let seen: u64 = self.counters.iter().map(|c| c.count() as u64).sum::<u64>() + self.saturated as u64;
        if exact == 0 {
            0.0
        } else {
            1.0 - seen as f64 / exact as f64
        }
    }
}

/// Clocked comparator acquisition of a population under explicit biases.
#[allow(clippy::too_many_arguments)]
pub fn acquire_phase(
    pop: &mut Population,
    v_eff: &[f64],
    clock_period: f64,
    cycles: usize,
    phase: Phase,
    energy: &EnergyConfig,
    key: StreamKey,
    ledger: &mut CostLedger,
) -> Result<Acquisition> {
    let counts = pop.sampled_event_count_driven(v_eff, clock_period, cycles, key)?;
    let mut counters = alloc::vec![Counter8::new(); pop.len()];
    let mut saturated = 0;
    for (c, &n) in counters.iter_mut().zip(&counts.sampled) {
        saturated += c.add(n);
    }
    let live = (pop.len() - pop.dead_count()) as u64;
    let e = ledger.events_mut(phase);
    e.comparator_cycles += live * cycles as u64;
    e.counter_ticks += counts.sampled.iter().map(|&n| n as u64).sum::<u64>() - saturated as u64;
    e.overflows += counters.iter().zip(&counts.sampled).filter(|(c, &n)| n > c.count() as u32).count() as u64;
    e.junction_energy += population_power(pop, &[], energy) * counts.duration();
    Ok(Acquisition { counters, exact: counts.exact, saturated })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatapathConfig {
    pub frac_bits: u8,
    /// Weight represented by a raw value of `2^frac_bits`.
    pub weight_scale: f64,
    pub alpha: f64,
    pub catch_halfwidth: f64,
    pub clock_period: f64,
    /// Clock cycles per acquisition window.
    pub acquisition_cycles: usize,
    /// Bias range of both populations; targets are mapped onto it affinely.
    pub range: (f64, f64),
    pub inversion: InversionModel,
    pub rate_floor_fraction: f64,
    pub learn: bool,
    pub energy: EnergyConfig,
    pub eval_trials: usize,
    pub eval_every: usize,
}

impl Default for DatapathConfig {
    fn default() -> Self {
        DatapathConfig {
            frac_bits: 7,
            weight_scale: 0.25,
            alpha: 0.001,
            catch_halfwidth: 0.02,
            clock_period: 40e-9,
            acquisition_cycles: 460,
            range: (-0.1, 0.1),
            inversion: InversionModel::PerJunction,
            rate_floor_fraction: 1e-3,
            learn: true,
            energy: EnergyConfig { diameter: 11e-9, stimulus: StimulusPower::WorstCase, ..EnergyConfig::default() },
            eval_trials: 50,
            eval_every: 100,
        }
    }
}

impl DatapathConfig {
    pub fn validate(&self) -> Result<()> {
        FixedPoint8::new(0, self.frac_bits)?;
        check_positive("weight_scale", self.weight_scale)?;
        check_positive("alpha", self.alpha)?;
        check_positive("catch_halfwidth", self.catch_halfwidth)?;
        check_positive("clock_period", self.clock_period)?;
        check_positive("rate_floor_fraction", self.rate_floor_fraction)?;
        if self.acquisition_cycles < 2 {
            return Err(Error::InvalidParameter { name: "acquisition_cycles", reason: "need at least two samples" });
        }
        if !(self.range.1 > self.range.0) {
            return Err(Error::InvalidParameter { name: "range", reason: "must be increasing" });
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidParameter { name: "eval_every", reason: "must be >= 1" });
        }
        self.energy.validate()
    }

    /// Duration spanned by the comparator samples.
    pub fn window(&self) -> f64 {
        (self.acquisition_cycles - 1) as f64 * self.clock_period
    }
}

/// Result of one system operation.
#[derive(Clone, Debug, PartialEq)]
pub struct Operation {
    pub stimulus: f64,
    pub decoded: f64,
    pub target: f64,
    pub error_pct: f64,
    pub silent: bool,
    pub writes: WriteStats,
    pub input_loss: f64,
}

/// Records kept over a datapath run.
#[derive(Clone, Debug, PartialEq)]
pub struct DatapathRun {
    pub curve: LearningCurve,
    /// Per-operation energy while learning.
    pub learning: EnergyReport,
    /// Per-operation energy of inference-only operations.
    pub inference: EnergyReport,
    pub write_bits: u64,
    pub naive_write_bits: u64,
    pub overflows: u64,
    pub fsm_visits: [u64; 7],
    /// Fraction of input switches missed by the clocked comparators.
    pub sampling_loss: f64,
}

/// Fixed-point system for a single-input single-output transform.
#[derive(Clone, Debug)]
pub struct DatapathSystem {
    transform: Transform,
    inputs: Population,
    outputs: Population,
    weights: FixedWeights,
    cfg: DatapathConfig,
    consts: LearnConstants,
    ledger: CostLedger,
    fsm: Fsm,
    trials: u64,
    checkpoints: u64,
    missed: u64,
    switches: u64,
}

impl DatapathSystem {
    pub fn build(
        transform: Transform,
        n_in: usize,
        n_out: usize,
        variability: VariabilitySpec,
        cfg: DatapathConfig,
        costs: CostConfig,
        key: StreamKey,
    ) -> Result<Self> {
        cfg.validate()?;
        let inputs = build_population(n_in, cfg.range, &variability, key.child(purpose::INPUT))?;
        let outputs = build_population(n_out, cfg.range, &variability, key.child(purpose::OUTPUT))?;
        let f0_in = inputs.nominal().natural_rate();
        let w = WeightMatrix::random(n_in, n_out, f0_in, outputs.nominal().natural_rate(), key);
        let (weights, _) = FixedWeights::from_float(&w, cfg.weight_scale, cfg.frac_bits)?;
        Self::from_parts(transform, inputs, outputs, weights, cfg, costs)
    }

    pub fn from_parts(
        transform: Transform,
        inputs: Population,
        outputs: Population,
        weights: FixedWeights,
        cfg: DatapathConfig,
        costs: CostConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if transform.arity() != (1, 1) {
            return Err(Error::InvalidParameter { name: "transform", reason: "the datapath handles one input and one output" });
        }
        check_len(inputs.len(), weights.n_in())?;
        check_len(outputs.len(), weights.n_out())?;
        if weights.frac_bits() != cfg.frac_bits {
            return Err(Error::InvalidParameter { name: "frac_bits", reason: "weights and config disagree" });
        }
        let counts_at_f0 = 2.0 * inputs.nominal().natural_rate() * cfg.window();
        let consts = LearnConstants::new(cfg.alpha, counts_at_f0, cfg.weight_scale, cfg.frac_bits)?;
        Ok(DatapathSystem {
            transform,
            inputs,
            outputs,
            weights,
            cfg,
            consts,
            ledger: CostLedger::new(costs)?,
            fsm: Fsm::default(),
            trials: 0,
            checkpoints: 0,
            missed: 0,
            switches: 0,
        })
    }

    pub fn weights(&self) -> &FixedWeights {
        &self.weights
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn fsm(&self) -> &Fsm {
        &self.fsm
    }

    pub fn config(&self) -> &DatapathConfig {
        &self.cfg
    }

    pub fn constants(&self) -> &LearnConstants {
        &self.consts
    }

    pub fn inputs(&self) -> &Population {
        &self.inputs
    }

    pub fn outputs(&self) -> &Population {
        &self.outputs
    }

    /// Target in the population's coordinates.
    pub fn target(&self, z: f64) -> f64 {
        let (lo, hi) = self.cfg.range;
        let (a, b) = self.transform.input_ranges()[0];
        let (c, d) = self.transform.output_ranges()[0];
        let native = a + (z - lo) / (hi - lo) * (b - a);
        let t = self.transform.eval(&[native])[0];
        lo + (t - c) / (d - c) * (hi - lo)
    }

    /// One pass through the state machine.
    pub fn operate(&mut self, z: f64, learn: bool, key: StreamKey) -> Result<Operation> {
        let cfg = self.cfg;
        self.fsm.begin()?;
        let v_in: Vec<f64> = self.inputs.params().iter().map(|p| z - p.v0).collect();
        let acq = acquire_phase(
            &mut self.inputs,
            &v_in,
            cfg.clock_period,
            cfg.acquisition_cycles,
            Phase::Acquire,
            &cfg.energy,
            key.child(purpose::INPUT),
            &mut self.ledger,
        )?;
        self.switches += acq.exact.iter().map(|&e| e as u64).sum::<u64>();
        let seen: u64 = acq.counters.iter().map(|c| c.count() as u64).sum::<u64>() + acq.saturated as u64;
        self.missed += acq.exact.iter().map(|&e| e as u64).sum::<u64>().saturating_sub(seen);

        self.fsm.go(FsmState::S1)?;
        let comp = compute_phase(&acq.counters, &self.weights, &mut self.ledger)?;

        self.fsm.go(FsmState::S2)?;
        // accumulator to a rate: weight_scale / 2^frac per unit, events over 2 T
        let per_unit = cfg.weight_scale * FixedPoint8::ulp(cfg.frac_bits) / (2.0 * cfg.window());
        let floor = cfg.rate_floor_fraction * self.outputs.nominal().natural_rate();
        let nominal = *self.outputs.nominal();
        let mut v_out = Vec::with_capacity(self.outputs.len());
        for (p, &a) in self.outputs.params().iter().zip(&comp.acc) {
            let model = match cfg.inversion {
                InversionModel::PerJunction => p,
                InversionModel::Nominal => &nominal,
            };
            let ceiling = model.natural_rate();
            let request = (a as f64 * per_unit).clamp(floor.min(ceiling), ceiling);
            v_out.push(invert_rate(model, request)?.v_eff);
        }
        let out = acquire_phase(
            &mut self.outputs,
            &v_out,
            cfg.clock_period,
            cfg.acquisition_cycles,
            Phase::Compute,
            &cfg.energy,
            key.child(purpose::OUTPUT),
            &mut self.ledger,
        )?;

        self.fsm.go(FsmState::S3)?;
        let biases = self.outputs.biases();
        let (num, den) =
            biases.iter().zip(&out.counters).fold((0.0, 0u64), |(n, d), (&v, c)| (n + v * c.count() as f64, d + c.count() as u64));
        self.ledger.events_mut(Phase::Compute).macs += self.outputs.len() as u64;
        let silent = den == 0;
        let decoded = if silent { (cfg.range.0 + cfg.range.1) / 2.0 } else { num / den as f64 };
        let target = self.target(z);
        let error_pct = 100.0 * libm::fabs(decoded - target) / (cfg.range.1 - cfg.range.0);

        let mut writes = WriteStats::default();
        if learn {
            self.fsm.go(FsmState::S4)?;
            let dirs = trial_direction(decoded, target, &biases, cfg.catch_halfwidth * (cfg.range.1 - cfg.range.0));
            self.fsm.go(FsmState::S5)?;
            writes = learn_phase(&acq.counters, &dirs, &mut self.weights, &self.consts, &mut self.ledger)?;
            self.fsm.go(FsmState::S6)?;
        }
        self.fsm.go(FsmState::S0)?;
        self.ledger.operations += 1;
        self.trials += 1;
        Ok(Operation { stimulus: z, decoded, target, error_pct, silent, writes, input_loss: acq.sampling_loss() })
    }

    fn draw(&self, key: StreamKey) -> f64 {
        let (lo, hi) = self.cfg.range;
        lo + (hi - lo) * key.child(purpose::STIMULUS).rng().random::<f64>()
    }

    /// Inference-only error on a copy; returns the stats and the copy's ledger.
    pub fn evaluate(&self, trials: usize, key: StreamKey) -> Result<(ErrorStats, CostLedger)> {
        let mut probe = self.clone();
        probe.ledger = CostLedger::new(self.ledger.costs)?;
        let mut errors = Vec::with_capacity(trials);
        let mut silent = 0;
        for t in 0..trials {
            let k = key.child(t as u64);
            let op = probe.operate(probe.draw(k), false, k)?;
            silent += op.silent as usize;
            errors.push(op.error_pct);
        }
        Ok((ErrorStats::from_errors(&errors, silent), probe.ledger))
    }

    /// Train for `steps` operations, evaluating every `eval_every`.
    pub fn run(&mut self, steps: usize, key: StreamKey) -> Result<DatapathRun> {
        let eval_root = key.child(purpose::EVAL);
        let train_root = key.child(purpose::TRAIN);
        let mut curve = LearningCurve::default();
        let checkpoint = |sys: &mut DatapathSystem, step: usize, curve: &mut LearningCurve| -> Result<CostLedger> {
            let (stats, ledger) = sys.evaluate(sys.cfg.eval_trials, eval_root.child(sys.checkpoints))?;
            sys.checkpoints += 1;
            curve.points.push(CurvePoint { step, mean: stats.mean, std: stats.std });
            Ok(ledger)
        };
        let start = self.ledger.clone();
        let mut inference = checkpoint(self, 0, &mut curve)?;
        let learn = self.cfg.learn;
        for step in 1..=steps {
            let k = train_root.child(self.trials);
            let z = self.draw(k);
            self.operate(z, learn, k)?;
            if step % self.cfg.eval_every == 0 || step == steps {
                inference = checkpoint(self, step, &mut curve)?;
            }
        }
        let mut training = self.ledger.clone();
        for p in Phase::ALL {
            let before = *start.events(p);
            let e = training.events_mut(p);
            e.comparator_cycles -= before.comparator_cycles;
            e.counter_ticks -= before.counter_ticks;
            e.macs -= before.macs;
            e.mram_read_bits -= before.mram_read_bits;
            e.mram_write_bits -= before.mram_write_bits;
            e.naive_write_bits -= before.naive_write_bits;
            e.overflows -= before.overflows;
            e.junction_energy -= before.junction_energy;
        }
        training.operations -= start.operations;
        let totals = training.total_events();
        Ok(DatapathRun {
            curve,
            learning: training.report(),
            inference: inference.report(),
            write_bits: totals.mram_write_bits,
            naive_write_bits: totals.naive_write_bits,
            overflows: totals.overflows,
            fsm_visits: self.fsm.visits(),
            sampling_loss: if self.switches == 0 { 0.0 } else { self.missed as f64 / self.switches as f64 },
        })
    }
}

/// Build a datapath system and train it for `steps` operations.
#[allow(clippy::too_many_arguments)]
pub fn run_system(
    transform: Transform,
    n_in: usize,
    n_out: usize,
    variability: VariabilitySpec,
    cfg: DatapathConfig,
    costs: CostConfig,
    steps: usize,
    key: StreamKey,
) -> Result<(DatapathRun, DatapathSystem)> {
    let mut sys = DatapathSystem::build(transform, n_in, n_out, variability, cfg, costs, key)?;
    let run = sys.run(steps, key)?;
    Ok((run, sys))
}
