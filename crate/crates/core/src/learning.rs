//! Learning transformations between interconnected populations.
//!
//! Input rates feed the output population through a weight matrix,
//! `r_out_j = sum_i w_ij r_in_i`. Each output junction is then driven at the
//! bias that makes its tuning curve produce `r_out_j`, its rate is measured,
//! and the population is decoded to a value `Y`. Training compares `Y` with
//! the target and nudges whole weight columns up or down:
//!
//! ```text
//! w_ij <- (w_ij +/- alpha * r_in_i / F0) / (1 + alpha)
//! ```
//!
//! No error magnitude is needed, only which side of the target `Y` fell on.

use alloc::string::ToString;
use alloc::vec::Vec;
use rand::Rng;

use crate::basis::RateMode;
use crate::device::{invert_rate, JunctionParams};
use crate::error::{check_len, check_positive, Error, Result};
use crate::population::{build_population, Population, VariabilitySpec};
use crate::rng::{purpose, StreamKey};

/// Experimental-scale observation window: 100 steps of 439 us.
pub const EXPERIMENTAL_WINDOW: RateMode = RateMode::MonteCarlo { steps: 100, dt: 439e-6 };

/// Scaled-junction observation window: 100 steps of 183 ns.
pub const SCALED_WINDOW: RateMode = RateMode::MonteCarlo { steps: 100, dt: 183e-9 };

#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    n_in: usize,
    n_out: usize,
    /// Row-major, `entries[i * n_out + j]` connects input `i` to output `j`.
    entries: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        WeightMatrix { n_in, n_out, entries: alloc::vec![0.0; n_in * n_out] }
    }

    pub fn identity(n: usize) -> Self {
        let mut w = Self::zeros(n, n);
        for i in 0..n {
            w.set(i, i, 1.0);
        }
        w
    }

    pub fn from_entries(n_in: usize, n_out: usize, entries: Vec<f64>) -> Result<Self> {
        check_len(n_in * n_out, entries.len())?;
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter { name: "weights", reason: "entries must be finite" });
        }
        Ok(WeightMatrix { n_in, n_out, entries })
    }

    /// Uniform in `[0, 2 * f0_out / f0_in / n_in)`, so that the initial output
    /// rates are positive and of the order of the output natural rate.
    pub fn random(n_in: usize, n_out: usize, f0_in: f64, f0_out: f64, key: StreamKey) -> Self {
        let hi = 2.0 * f0_out / f0_in / n_in as f64;
        let mut rng = key.child(purpose::WEIGHTS).rng();
        let entries = (0..n_in * n_out).map(|_| hi * rng.random::<f64>()).collect();
        WeightMatrix { n_in, n_out, entries }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n_out + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n_out + j] = v;
    }
}

/// Output rates `r_out_j = sum_i w_ij r_in_i`. Values may be negative.
pub fn forward(rates_in: &[f64], w: &WeightMatrix) -> Result<Vec<f64>> {
    check_len(w.n_in, rates_in.len())?;
    let mut out = alloc::vec![0.0; w.n_out];
    for (i, &r) in rates_in.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let row = &w.entries[i * w.n_out..(i + 1) * w.n_out];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * r;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Increase,
    Decrease,
    Hold,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Increase => Direction::Decrease,
            Direction::Decrease => Direction::Increase,
            Direction::Hold => Direction::Hold,
        }
    }
}

/// Apply the learning rule to every column whose direction is not `Hold`.
pub fn update_weights(w: &mut WeightMatrix, rates_in: &[f64], directions: &[Direction], alpha: f64, f0: f64) -> Result<()> {
    check_len(w.n_in, rates_in.len())?;
    check_len(w.n_out, directions.len())?;
    let shrink = 1.0 / (1.0 + alpha);
    for (i, &r) in rates_in.iter().enumerate() {
        let push = alpha * r / f0;
        let row = &mut w.entries[i * w.n_out..(i + 1) * w.n_out];
        for (wij, d) in row.iter_mut().zip(directions) {
            match d {
                Direction::Increase => *wij = (*wij + push) * shrink,
                Direction::Decrease => *wij = (*wij - push) * shrink,
                Direction::Hold => {}
            }
        }
    }
    Ok(())
}

/// Which way each output column should move after a trial.
///
/// Inside the catch zone nothing changes. When the decoded value `y`
/// overshoots the target, junctions tuned above `y` are weakened and those
/// below `y` strengthened; undershoot is the mirror image.
pub fn trial_direction(y: f64, target: f64, biases: &[f64], catch_zone: f64) -> Vec<Direction> {
    if libm::fabs(y - target) <= catch_zone {
        return alloc::vec![Direction::Hold; biases.len()];
    }
    let overshoot = y > target;
    biases
        .iter()
        .map(|&v0| {
            if v0 == y {
                Direction::Hold
            } else if (v0 > y) == overshoot {
                Direction::Decrease
            } else {
                Direction::Increase
            }
        })
        .collect()
}

/// How the bias for a requested output rate is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InversionModel {
    /// Each junction is inverted with its own parameters.
    PerJunction,
    /// All junctions are inverted with the nominal parameters of their
    /// population, as a controller that only knows the design values would.
    Nominal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnConfig {
    pub alpha: f64,
    /// Half-width of the catch zone as a fraction of the output range.
    pub catch_halfwidth: f64,
    /// Rate normalization in the learning rule. `None` uses the nominal
    /// natural rate of the input populations.
    pub f0_norm: Option<f64>,
    pub steps: usize,
    pub eval_trials: usize,
    pub eval_every: usize,
    pub mode: RateMode,
    /// Requested output rates are floored at this fraction of the nominal
    /// natural rate before inversion.
    pub rate_floor_fraction: f64,
    pub inversion: InversionModel,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            alpha: 0.001,
            catch_halfwidth: 0.02,
            f0_norm: None,
            steps: 3000,
            eval_trials: 50,
            eval_every: 100,
            mode: EXPERIMENTAL_WINDOW,
            rate_floor_fraction: 1e-3,
            inversion: InversionModel::PerJunction,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("alpha", self.alpha)?;
        check_positive("catch_halfwidth", self.catch_halfwidth)?;
        if let Some(f0) = self.f0_norm {
            check_positive("f0_norm", f0)?;
        }
        check_positive("rate_floor_fraction", self.rate_floor_fraction)?;
        if self.eval_every == 0 {
            return Err(Error::InvalidParameter { name: "eval_every", reason: "must be >= 1" });
        }
        if let RateMode::MonteCarlo { dt, .. } = self.mode {
            check_positive("dt", dt)?;
        }
        Ok(())
    }
}

/// Named target transformations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    /// `T(Z) = Z` over +/-0.15 V.
    Identity,
    /// `T(Z) = 2 Z`.
    Double,
    /// `T(Z) = Z^2 / 0.15`.
    Square,
    /// One period of a sine, `0.15 sin(Z pi / 0.15)`. The raw form
    /// `sin(Z pi / 0.15) / 0.15` spans +/-6.7 V and is scaled into the
    /// +/-0.15 V output range.
    Sine,
    /// `T(Z) = k / (Z + z0)`, with `z0 > 0.15` keeping the pole outside the input range.
    Inverse { k: f64, z0: f64 },
    /// `(R, phi) -> (R cos(phi pi / 0.6), R sin(phi pi / 0.6))` with every
    /// coordinate in [0, 0.3] V.
    PolarToCartesian,
    /// `0.15 sin^2(Z pi / 0.15)`: the square stage applied after the sine stage.
    SineSquared,
}

const HALF_RANGE: f64 = 0.15;
const SYMMETRIC: (f64, f64) = (-HALF_RANGE, HALF_RANGE);
const POLAR: (f64, f64) = (0.0, 0.3);

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Double => "double",
            Transform::Square => "square",
            Transform::Sine => "sine",
            Transform::Inverse { .. } => "inverse",
            Transform::PolarToCartesian => "polar",
            Transform::SineSquared => "sine_squared",
        }
    }

    pub fn input_ranges(&self) -> Vec<(f64, f64)> {
        match self {
            Transform::PolarToCartesian => alloc::vec![POLAR, POLAR],
            _ => alloc::vec![SYMMETRIC],
        }
    }

    pub fn output_ranges(&self) -> Vec<(f64, f64)> {
        match *self {
            Transform::Identity | Transform::Sine => alloc::vec![SYMMETRIC],
            Transform::Double => alloc::vec![(-2.0 * HALF_RANGE, 2.0 * HALF_RANGE)],
            Transform::Square | Transform::SineSquared => alloc::vec![(0.0, HALF_RANGE)],
            Transform::Inverse { k, z0 } => alloc::vec![(k / (z0 + HALF_RANGE), k / (z0 - HALF_RANGE))],
            Transform::PolarToCartesian => alloc::vec![POLAR, POLAR],
        }
    }

    pub fn arity(&self) -> (usize, usize) {
        match self {
            Transform::PolarToCartesian => (2, 2),
            _ => (1, 1),
        }
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        let s = |v: f64| HALF_RANGE * libm::sin(v * core::f64::consts::PI / HALF_RANGE);
        match *self {
            Transform::Identity => alloc::vec![z[0]],
            Transform::Double => alloc::vec![2.0 * z[0]],
            Transform::Square => alloc::vec![z[0] * z[0] / HALF_RANGE],
            Transform::Sine => alloc::vec![s(z[0])],
            Transform::Inverse { k, z0 } => alloc::vec![k / (z[0] + z0)],
            Transform::PolarToCartesian => {
                let angle = z[1] * core::f64::consts::PI / 0.6;
                alloc::vec![z[0] * libm::cos(angle), z[0] * libm::sin(angle)]
            }
            Transform::SineSquared => {
                let v = s(z[0]);
                alloc::vec![v * v / HALF_RANGE]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Transform::Inverse { k, z0 } = *self {
            check_positive("k", k)?;
            if !(z0 > HALF_RANGE) {
                return Err(Error::InvalidParameter { name: "z0", reason: "pole must lie outside the input range" });
            }
        }
        Ok(())
    }
}

/// Look up a transform by name. `inverse` takes optional `[k, z0]`.
pub fn transform_library(name: &str, params: &[f64]) -> Result<Transform> {
    let t = match name {
        "identity" | "gripper" => Transform::Identity,
        "double" => Transform::Double,
        "square" => Transform::Square,
        "sine" => Transform::Sine,
        "inverse" => Transform::Inverse { k: params.first().copied().unwrap_or(0.0225), z0: params.get(1).copied().unwrap_or(0.3) },
        "polar" | "polar_to_cartesian" => Transform::PolarToCartesian,
        "sine_squared" => Transform::SineSquared,
        other => return Err(Error::UnknownTransform(other.to_string())),
    };
    t.validate()?;
    Ok(t)
}

/// Population layout for one learning task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub transform: Transform,
    /// One size per input population.
    pub input_sizes: Vec<usize>,
    /// One size per output population.
    pub output_sizes: Vec<usize>,
    pub input_variability: VariabilitySpec,
    pub output_variability: VariabilitySpec,
}

impl TaskSpec {
    /// Every population gets `n_in` / `n_out` junctions with the same spread.
    pub fn new(transform: Transform, n_in: usize, n_out: usize, variability: VariabilitySpec) -> Self {
        let (a, b) = transform.arity();
        TaskSpec {
            transform,
            input_sizes: alloc::vec![n_in; a],
            output_sizes: alloc::vec![n_out; b],
            input_variability: variability,
            output_variability: variability,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        let (a, b) = self.transform.arity();
        check_len(a, self.input_sizes.len())?;
        check_len(b, self.output_sizes.len())?;
        self.input_variability.validate()?;
        self.output_variability.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub stimuli: Vec<f64>,
    pub decoded: Vec<f64>,
    pub target: Vec<f64>,
    /// Distance to the target as a percentage of the output range; the
    /// Euclidean combination when there are several outputs.
    pub error_pct: f64,
    /// Per output population, empty unless the trial updated weights.
    pub directions: Vec<Vec<Direction>>,
}

/// Mean and standard deviation of trial errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    /// Trials where an output population produced no events.
    pub silent: usize,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64], silent: usize) -> Self {
        let n = errors.len();
        if n == 0 {
            return ErrorStats { mean: f64::NAN, std: f64::NAN, trials: 0, silent };
        }
        let mean = errors.iter().sum::<f64>() / n as f64;
        let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n as f64;
        ErrorStats { mean, std: libm::sqrt(var), trials: n, silent }
    }

    /// Standard deviation of the mean.
    pub fn sem(&self) -> f64 {
        self.std / libm::sqrt(self.trials as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn first(&self) -> Option<&CurvePoint> {
        self.points.first()
    }

    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    /// Mean error over the final `tail` checkpoints.
    pub fn asymptote(&self, tail: usize) -> f64 {
        let k = tail.clamp(1, self.points.len().max(1));
        let pts = &self.points[self.points.len().saturating_sub(k)..];
        pts.iter().map(|p| p.mean).sum::<f64>() / pts.len() as f64
    }

    /// First step, relative to the first checkpoint, from which the moving
    /// average over `smooth` checkpoints is within `rel_tol` of the
    /// asymptote of the final `tail` checkpoints.
    pub fn steps_to_asymptote(&self, rel_tol: f64, smooth: usize, tail: usize) -> Option<usize> {
        let start = self.first()?.step;
        let asym = self.asymptote(tail);
        let w = smooth.max(1);
        self.points
            .windows(w.min(self.points.len()))
            .find(|win| win.iter().map(|p| p.mean).sum::<f64>() / win.len() as f64 <= (1.0 + rel_tol) * asym)
            .map(|win| win[0].step - start)
    }
}

/// Counters kept while a system trains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunCounters {
    pub trials: u64,
    /// Requested output rates moved to the floor or the ceiling.
    pub clamp_events: u64,
    pub silent_trials: u64,
}

/// Output of [`drive_output`].
#[derive(Clone, Debug, PartialEq)]
pub struct DriveResult {
    pub v_eff: Vec<f64>,
    /// Requested rates after clamping.
    pub clamped_targets: Vec<f64>,
    pub rates: Vec<f64>,
    pub decoded: Result<f64>,
    pub clamp_events: usize,
}

/// Drive an output population so that its rates follow `targets`.
///
/// Each target is clamped into `[floor, r0]`, inverted to a bias, the
/// population is observed under those biases and decoded.
pub fn drive_output(
    pop: &mut Population,
    targets: &[f64],
    rate_floor: f64,
    inversion: InversionModel,
    mode: RateMode,
    key: StreamKey,
) -> Result<DriveResult> {
    check_len(pop.len(), targets.len())?;
    check_positive("rate_floor", rate_floor)?;
    let nominal = *pop.nominal();
    let mut clamp_events = 0;
    let mut v_eff = Vec::with_capacity(targets.len());
    let mut clamped_targets = Vec::with_capacity(targets.len());
    for (p, &t) in pop.params().iter().zip(targets) {
        let model: &JunctionParams = match inversion {
            InversionModel::PerJunction => p,
            InversionModel::Nominal => &nominal,
        };
        let ceiling = model.natural_rate();
        let floor = rate_floor.min(ceiling);
        let request = if t.is_nan() { floor } else { t.clamp(floor, ceiling) };
        if request != t {
            clamp_events += 1;
        }
        v_eff.push(invert_rate(model, request)?.v_eff);
        clamped_targets.push(request);
    }
    let rates = match mode {
        RateMode::Analytic => pop.analytic_rates_driven(&v_eff)?,
        RateMode::MonteCarlo { steps, dt } => pop.simulate_driven(&v_eff, steps, dt, key)?.rates(),
    };
    let decoded = pop.decode(&rates);
    Ok(DriveResult { v_eff, clamped_targets, rates, decoded, clamp_events })
}

/// Concatenate per-population rate vectors; returns the offsets of each block.
pub fn concat_inputs(blocks: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut all = Vec::with_capacity(blocks.iter().map(Vec::len).sum());
    for b in blocks {
        offsets.push(all.len());
        all.extend_from_slice(b);
    }
    (all, offsets)
}

/// Rates of a population at a stimulus, analytic or simulated.
pub fn observe(pop: &mut Population, stimulus: f64, mode: RateMode, key: StreamKey) -> Vec<f64> {
    match mode {
        RateMode::Analytic => pop.analytic_rates(stimulus),
        RateMode::MonteCarlo { steps, dt } => pop.simulate_window(stimulus, steps, dt, key).rates(),
    }
}

/// Input populations, weights and output populations for one transform.
#[derive(Clone, Debug)]
pub struct TransformSystem {
    transform: Transform,
    inputs: Vec<Population>,
    outputs: Vec<Population>,
    /// One matrix per output population, all inputs concatenated.
    weights: Vec<WeightMatrix>,
    cfg: LearnConfig,
    f0: f64,
    counters: RunCounters,
    checkpoints: u64,
}

impl TransformSystem {
    /// Build populations and random weights for `task`.
    pub fn build(task: &TaskSpec, cfg: LearnConfig, key: StreamKey) -> Result<Self> {
        task.validate()?;
        let inputs = task
            .input_sizes
            .iter()
            .zip(task.transform.input_ranges())
            .enumerate()
            .map(|(k, (&n, range))| build_population(n, range, &task.input_variability, key.child(purpose::INPUT).child(k as u64)))
            .collect::<Result<Vec<_>>>()?;
        let outputs = task
            .output_sizes
            .iter()
            .zip(task.transform.output_ranges())
            .enumerate()
            .map(|(k, (&n, range))| build_population(n, range, &task.output_variability, key.child(purpose::OUTPUT).child(k as u64)))
            .collect::<Result<Vec<_>>>()?;
        let n_in: usize = inputs.iter().map(Population::len).sum();
        let f0_in = mean_nominal_rate(&inputs);
        let weights = outputs
            .iter()
            .enumerate()
            .map(|(k, out)| WeightMatrix::random(n_in, out.len(), f0_in, out.nominal().natural_rate(), key.child(k as u64)))
            .collect();
        Self::from_parts(task.transform, inputs, outputs, weights, cfg)
    }

    pub fn from_parts(
        transform: Transform,
        inputs: Vec<Population>,
        outputs: Vec<Population>,
        weights: Vec<WeightMatrix>,
        cfg: LearnConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        transform.validate()?;
        let (a, b) = transform.arity();
        check_len(a, inputs.len())?;
        check_len(b, outputs.len())?;
        check_len(b, weights.len())?;
        let n_in: usize = inputs.iter().map(Population::len).sum();
        for (w, out) in weights.iter().zip(&outputs) {
            check_len(n_in, w.n_in())?;
            check_len(out.len(), w.n_out())?;
        }
        let f0 = cfg.f0_norm.unwrap_or_else(|| mean_nominal_rate(&inputs));
        Ok(TransformSystem { transform, inputs, outputs, weights, cfg, f0, counters: RunCounters::default(), checkpoints: 0 })
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn inputs(&self) -> &[Population] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Population] {
        &self.outputs
    }

    pub fn weights(&self) -> &[WeightMatrix] {
        &self.weights
    }

    pub fn config(&self) -> &LearnConfig {
        &self.cfg
    }

    pub fn set_config(&mut self, cfg: LearnConfig) -> Result<()> {
        cfg.validate()?;
        self.f0 = cfg.f0_norm.unwrap_or_else(|| mean_nominal_rate(&self.inputs));
        self.cfg = cfg;
        Ok(())
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn counters(&self) -> RunCounters {
        self.counters
    }

    /// Concatenated input rates at the given stimuli.
    pub fn input_rates(&mut self, stimuli: &[f64], mode: RateMode, key: StreamKey) -> Result<Vec<f64>> {
        check_len(self.inputs.len(), stimuli.len())?;
        let blocks: Vec<Vec<f64>> =
            self.inputs.iter_mut().zip(stimuli).enumerate().map(|(k, (pop, &z))| observe(pop, z, mode, key.child(k as u64))).collect();
        Ok(concat_inputs(&blocks).0)
    }

    /// Push input rates through the weights and output populations.
    /// Returns the decoded values, one per output, plus whether any was silent.
    pub fn respond(&mut self, rates_in: &[f64], mode: RateMode, key: StreamKey) -> Result<(Vec<f64>, bool)> {
        let mut decoded = Vec::with_capacity(self.outputs.len());
        let mut silent = false;
        for (k, (out, w)) in self.outputs.iter_mut().zip(&self.weights).enumerate() {
            let targets = forward(rates_in, w)?;
            let floor = self.cfg.rate_floor_fraction * out.nominal().natural_rate();
            let drive = drive_output(out, &targets, floor, self.cfg.inversion, mode, key.child(k as u64))?;
            self.counters.clamp_events += drive.clamp_events as u64;
            decoded.push(match drive.decoded {
                Ok(y) => y,
                Err(Error::PopulationSilent) => {
                    silent = true;
                    let (lo, hi) = out.range();
                    (lo + hi) / 2.0
                }
                Err(e) => return Err(e),
            });
        }
        Ok((decoded, silent))
    }

    /// Run one presentation at `stimuli`, optionally applying the learning rule.
    pub fn trial_with(&mut self, stimuli: &[f64], learn: bool, mode: RateMode, key: StreamKey) -> Result<TrialResult> {
        let rates_in = self.input_rates(stimuli, mode, key.child(purpose::INPUT))?;
        let (decoded, silent) = self.respond(&rates_in, mode, key.child(purpose::OUTPUT))?;
        let target = self.transform.eval(stimuli);
        let error_pct = error_pct(&decoded, &target, &self.transform.output_ranges());
        self.counters.trials += 1;
        if silent {
            self.counters.silent_trials += 1;
        }
        let mut directions = Vec::new();
        if learn {
            for (k, out) in self.outputs.iter().enumerate() {
                let (lo, hi) = out.range();
                let dirs = trial_direction(decoded[k], target[k], &out.biases(), self.cfg.catch_halfwidth * (hi - lo));
                update_weights(&mut self.weights[k], &rates_in, &dirs, self.cfg.alpha, self.f0)?;
                directions.push(dirs);
            }
        }
        Ok(TrialResult { stimuli: stimuli.to_vec(), decoded, target, error_pct, directions })
    }

    pub fn trial(&mut self, stimuli: &[f64], learn: bool, key: StreamKey) -> Result<TrialResult> {
        let mode = self.cfg.mode;
        self.trial_with(stimuli, learn, mode, key)
    }

    /// Stimuli drawn uniformly over each input range.
    pub fn draw_stimuli(&self, key: StreamKey) -> Vec<f64> {
        let mut rng = key.child(purpose::STIMULUS).rng();
        self.inputs
            .iter()
            .map(|p| {
                let (lo, hi) = p.range();
                lo + (hi - lo) * rng.random::<f64>()
            })
            .collect()
    }

    /// Error over `trials` fresh random stimuli, on a copy of the system so
    /// evaluation never perturbs training.
    pub fn evaluate_with(&self, trials: usize, mode: RateMode, key: StreamKey) -> Result<ErrorStats> {
        let mut probe = self.clone();
        let mut errors = Vec::with_capacity(trials);
        let mut silent = 0;
        for t in 0..trials {
            let k = key.child(t as u64);
            let stimuli = probe.draw_stimuli(k);
            let before = probe.counters.silent_trials;
            errors.push(probe.trial_with(&stimuli, false, mode, k)?.error_pct);
            silent += (probe.counters.silent_trials - before) as usize;
        }
        Ok(ErrorStats::from_errors(&errors, silent))
    }

    pub fn evaluate(&self, trials: usize, key: StreamKey) -> Result<ErrorStats> {
        self.evaluate_with(trials, self.cfg.mode, key)
    }

    /// Train for `steps` trials, evaluating every `eval_every` steps.
    pub fn learn(&mut self, steps: usize, key: StreamKey) -> Result<LearningCurve> {
        let mut curve = LearningCurve::default();
        let mode = self.cfg.mode;
        let eval_root = key.child(purpose::EVAL);
        let train_root = key.child(purpose::TRAIN);
        let checkpoint = |sys: &mut TransformSystem, step: usize, curve: &mut LearningCurve| -> Result<()> {
            let stats = sys.evaluate_with(sys.cfg.eval_trials, mode, eval_root.child(sys.checkpoints))?;
            sys.checkpoints += 1;
            curve.points.push(CurvePoint { step, mean: stats.mean, std: stats.std });
            Ok(())
        };
        checkpoint(self, 0, &mut curve)?;
        for step in 1..=steps {
            let k = train_root.child(self.counters.trials);
            let stimuli = self.draw_stimuli(k);
            self.trial_with(&stimuli, true, mode, k)?;
            if step % self.cfg.eval_every == 0 || step == steps {
                checkpoint(self, step, &mut curve)?;
            }
        }
        Ok(curve)
    }

    /// Kill the same fraction of junctions in every population.
    pub fn kill(&mut self, fraction: f64, key: StreamKey) -> Result<()> {
        for (k, p) in self.inputs.iter_mut().enumerate() {
            *p = p.kill_neurons(fraction, key.child(purpose::INPUT).child(k as u64))?;
        }
        for (k, p) in self.outputs.iter_mut().enumerate() {
            *p = p.kill_neurons(fraction, key.child(purpose::OUTPUT).child(k as u64))?;
        }
        Ok(())
    }
}

fn mean_nominal_rate(pops: &[Population]) -> f64 {
    pops.iter().map(|p| p.nominal().natural_rate()).sum::<f64>() / pops.len().max(1) as f64
}

fn error_pct(decoded: &[f64], target: &[f64], ranges: &[(f64, f64)]) -> f64 {
    let sq: f64 = decoded
        .iter()
        .zip(target)
        .zip(ranges)
        .map(|((y, t), (lo, hi))| {
            let e = (y - t) / (hi - lo);
            e * e
        })
        .sum();
    100.0 * libm::sqrt(sq)
}

/// Build a system for `task` and train it for `cfg.steps` trials.
pub fn run_learning(task: &TaskSpec, cfg: LearnConfig, key: StreamKey) -> Result<(LearningCurve, TransformSystem)> {
    let mut sys = TransformSystem::build(task, cfg, key)?;
    let curve = sys.learn(cfg.steps, key)?;
    Ok((curve, sys))
}

/// Recovery after junction loss.
#[derive(Clone, Debug)]
pub struct Recovery {
    /// Error right after the loss, before any re-learning.
    pub after_loss: ErrorStats,
    pub curve: LearningCurve,
    pub system: TransformSystem,
}

/// Kill `fraction` of every population of a trained system and resume learning.
pub fn relearn_after_fault(trained: &TransformSystem, fraction: f64, steps: usize, key: StreamKey) -> Result<Recovery> {
    let mut system = trained.clone();
    system.kill(fraction, key.child(purpose::FAULT))?;
    let after_loss = system.evaluate(system.cfg.eval_trials, key.child(purpose::EVAL).child(u64::MAX))?;
    let curve = system.learn(steps, key.child(purpose::TRAIN))?;
    Ok(Recovery { after_loss, curve, system })
}

/// How the weight matrices of a [`Chain`] are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainTraining {
    /// Each stage alone, its input population observing the stimulus.
    Isolated,
    /// All stages at once on every composed trial.
    Joint,
    /// Stage after stage, earlier stages frozen, `steps` trials each.
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Learning {
    Off,
    All,
    Only(usize),
}

impl Learning {
    fn includes(self, k: usize) -> bool {
        match self {
            Learning::Off => false,
            Learning::All => true,
            Learning::Only(l) => l == k,
        }
    }
}

/// Range margins of the populations downstream of a chain's input, in volts.
///
/// The population-vector decode is pulled toward the center near the edges
/// of a population's range, which the next stage then amplifies. Widening
/// the downstream populations keeps the coded values away from those edges.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainLayout {
    pub middle_margin: f64,
    pub output_margin: f64,
}

impl Default for ChainLayout {
    fn default() -> Self {
        ChainLayout { middle_margin: 0.05, output_margin: 0.1 }
    }
}

impl ChainLayout {
    /// No widening: every population spans exactly the range it codes for.
    pub const TIGHT: ChainLayout = ChainLayout { middle_margin: 0.0, output_margin: 0.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("middle_margin", self.middle_margin), ("output_margin", self.output_margin)] {
            if !(m >= 0.0) || !m.is_finite() {
                return Err(Error::InvalidParameter { name, reason: "must be finite and >= 0" });
            }
        }
        Ok(())
    }
}

/// Single-input transforms chained through intermediate populations.
///
/// Stage `k`'s output population is the input population of stage `k + 1`.
/// Each stage is trained on its own sub-task; at run time the measured rates
/// of a driven intermediate population feed the next weight matrix.
#[derive(Clone, Debug)]
pub struct Chain {
    stages: Vec<TransformSystem>,
}

impl Chain {
    pub fn new(stages: Vec<TransformSystem>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidParameter { name: "stages", reason: "need at least one stage" });
        }
        for s in &stages {
            if s.transform.arity() != (1, 1) {
                return Err(Error::InvalidParameter { name: "stages", reason: "chained stages must be single-input single-output" });
            }
        }
        for pair in stages.windows(2) {
            check_len(pair[0].outputs[0].len(), pair[1].weights[0].n_in())?;
        }
        Ok(Chain { stages })
    }

    /// Series arrangement of `transforms`, every population built from
    /// `variability`. The intermediate and final populations are widened by
    /// the `layout` margins around the range they code for.
    pub fn build(
        transforms: &[Transform],
        n: usize,
        variability: VariabilitySpec,
        cfg: LearnConfig,
        layout: ChainLayout,
        key: StreamKey,
    ) -> Result<Self> {
        layout.validate()?;
        let last = transforms.len().saturating_sub(1);
        let first_range = match transforms.first() {
            Some(t) => t.input_ranges()[0],
            None => return Err(Error::InvalidParameter { name: "stages", reason: "need at least one stage" }),
        };
        let widen = |(lo, hi): (f64, f64), m: f64| (lo - m, hi + m);
        let mut input = build_population(n, first_range, &variability, key.child(purpose::INPUT))?;
        let mut stages = Vec::with_capacity(transforms.len());
        for (k, &t) in transforms.iter().enumerate() {
            let margin = if k == last { layout.output_margin } else { layout.middle_margin };
            let range = widen(t.output_ranges()[0], margin);
            // the intermediate populations are shared physical devices
            let output = build_population(n, range, &variability, key.child(purpose::OUTPUT).child(k as u64))?;
            let f0_out = output.nominal().natural_rate();
            let w = WeightMatrix::random(n, n, input.nominal().natural_rate(), f0_out, key.child(k as u64));
            stages.push(TransformSystem::from_parts(t, alloc::vec![input], alloc::vec![output.clone()], alloc::vec![w], cfg)?);
            input = output;
        }
        Chain::new(stages)
    }

    pub fn stages(&self) -> &[TransformSystem] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [TransformSystem] {
        &mut self.stages
    }

    /// Train every stage in isolation, each stage's input population
    /// observing the stimulus directly.
    pub fn train(&mut self, steps: usize, key: StreamKey) -> Result<Vec<LearningCurve>> {
        self.stages.iter_mut().enumerate().map(|(k, s)| s.learn(steps, key.child(k as u64))).collect()
    }

    pub fn target(&self, z: f64) -> f64 {
        self.stages.iter().fold(z, |v, s| s.transform.eval(&[v])[0])
    }

    pub fn output_range(&self) -> (f64, f64) {
        self.stages[self.stages.len() - 1].transform.output_ranges()[0]
    }

    /// Composed presentation of stimulus `z`.
    pub fn trial(&mut self, z: f64, key: StreamKey) -> Result<TrialResult> {
        self.pass(z, Learning::Off, key)
    }

    /// Forward pass through every stage. With `learn`, stage `k` is trained
    /// to apply its own transform to the value decoded from its input
    /// population, using the rates actually fed into it.
    fn pass(&mut self, z: f64, learn: Learning, key: StreamKey) -> Result<TrialResult> {
        let mode = self.stages[0].cfg.mode;
        let mut rates = self.stages[0].input_rates(&[z], mode, key.child(purpose::INPUT))?;
        let mut represented = z;
        let mut decoded = 0.0;
        let mut directions = Vec::new();
        for (k, stage) in self.stages.iter_mut().enumerate() {
            let stage_target = stage.transform.eval(&[represented])[0];
            let out = &mut stage.outputs[0];
            let targets = forward(&rates, &stage.weights[0])?;
            let floor = stage.cfg.rate_floor_fraction * out.nominal().natural_rate();
            let drive = drive_output(out, &targets, floor, stage.cfg.inversion, mode, key.child(purpose::OUTPUT).child(k as u64))?;
            stage.counters.clamp_events += drive.clamp_events as u64;
            let (lo, hi) = out.range();
            decoded = match drive.decoded {
                Ok(y) => y,
                Err(Error::PopulationSilent) => {
                    stage.counters.silent_trials += 1;
                    (lo + hi) / 2.0
                }
                Err(e) => return Err(e),
            };
            stage.counters.trials += 1;
            if learn.includes(k) {
                let dirs = trial_direction(decoded, stage_target, &out.biases(), stage.cfg.catch_halfwidth * (hi - lo));
                update_weights(&mut stage.weights[0], &rates, &dirs, stage.cfg.alpha, stage.f0)?;
                directions.push(dirs);
            }
            rates = drive.rates;
            represented = decoded;
        }
        let target = self.target(z);
        let error_pct = error_pct(&[decoded], &[target], &[self.output_range()]);
        Ok(TrialResult { stimuli: alloc::vec![z], decoded: alloc::vec![decoded], target: alloc::vec![target], error_pct, directions })
    }

    /// Train the stages on the composed pipeline, each against its own
    /// transform. Returns the composed error curve.
    pub fn train_composed(&mut self, mode: ChainTraining, steps: usize, key: StreamKey) -> Result<LearningCurve> {
        let plan: Vec<Learning> = match mode {
            ChainTraining::Isolated => {
                let curves = self.train(steps, key)?;
                let mut curve = LearningCurve::default();
                let stats = self.evaluate(self.stages[0].cfg.eval_trials, key.child(purpose::EVAL))?;
                let total = curves.iter().filter_map(|c| c.last()).map(|p| p.step).sum();
                curve.points.push(CurvePoint { step: total, mean: stats.mean, std: stats.std });
                return Ok(curve);
            }
            ChainTraining::Joint => alloc::vec![Learning::All; steps],
            ChainTraining::Sequential => (0..self.stages.len()).flat_map(|k| core::iter::repeat_n(Learning::Only(k), steps)).collect(),
        };
        let cfg = self.stages[0].cfg;
        let (lo, hi) = self.stages[0].inputs[0].range();
        let mut curve = LearningCurve::default();
        let eval_root = key.child(purpose::EVAL);
        let train_root = key.child(purpose::TRAIN);
        let stats = self.evaluate(cfg.eval_trials, eval_root.child(0))?;
        curve.points.push(CurvePoint { step: 0, mean: stats.mean, std: stats.std });
        for (t, &learn) in plan.iter().enumerate() {
            let step = t + 1;
            let k = train_root.child(step as u64);
            let z = lo + (hi - lo) * k.child(purpose::STIMULUS).rng().random::<f64>();
            self.pass(z, learn, k)?;
            if step % cfg.eval_every == 0 || step == plan.len() {
                let stats = self.evaluate(cfg.eval_trials, eval_root.child(step as u64))?;
                curve.points.push(CurvePoint { step, mean: stats.mean, std: stats.std });
            }
        }
        Ok(curve)
    }

    pub fn evaluate(&self, trials: usize, key: StreamKey) -> Result<ErrorStats> {
        let mut probe = self.clone();
        let (lo, hi) = probe.stages[0].inputs[0].range();
        let mut errors = Vec::with_capacity(trials);
        for t in 0..trials {
            let k = key.child(t as u64);
            let z = lo + (hi - lo) * k.child(purpose::STIMULUS).rng().random::<f64>();
            errors.push(probe.trial(z, k)?.error_pct);
        }
        Ok(ErrorStats::from_errors(&errors, 0))
    }
}
