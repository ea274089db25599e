//! Populations of junctions tuned to evenly spaced biases.

use alloc::vec::Vec;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::device::{analytic_rate, escape_rates, JunctionParams, JunctionState, Orientation, Stepper};
use crate::error::{check_positive, Error, Result};
use crate::rng::{purpose, StreamKey};

/// Device-to-device spread of junction parameters.
///
/// Barriers are drawn uniformly from `delta_center +/- delta_span / 2`,
/// critical voltages from a normal distribution (redrawn until positive).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariabilitySpec {
    pub delta_center: f64,
    /// Full width of the uniform barrier distribution.
    pub delta_span: f64,
    pub v_c_mean: f64,
    pub v_c_std: f64,
}

impl VariabilitySpec {
    /// Identical junctions.
    pub fn uniform(delta: f64, v_c: f64) -> Self {
        VariabilitySpec { delta_center: delta, delta_span: 0.0, v_c_mean: v_c, v_c_std: 0.0 }
    }

    /// Spread extracted from the measured devices.
    pub fn experimental() -> Self {
        VariabilitySpec { delta_center: 13.78, delta_span: 9.65, v_c_mean: 0.142, v_c_std: 0.037 }
    }

    /// Scaled-down junctions used for energy estimates.
    pub fn scaled() -> Self {
        Self::uniform(6.0, 0.1)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("delta_center", self.delta_center)?;
        check_positive("v_c_mean", self.v_c_mean)?;
        if !(self.delta_span >= 0.0) || !self.delta_span.is_finite() {
            return Err(Error::InvalidParameter { name: "delta_span", reason: "must be >= 0" });
        }
        if self.delta_center - self.delta_span / 2.0 <= 0.0 {
            return Err(Error::InvalidParameter { name: "delta_span", reason: "barrier range must stay positive" });
        }
        if !(self.v_c_std >= 0.0) || !self.v_c_std.is_finite() {
            return Err(Error::InvalidParameter { name: "v_c_std", reason: "must be >= 0" });
        }
        Ok(())
    }

    /// Parameters of the junction at the center of the distribution.
    pub fn nominal(&self) -> JunctionParams {
        JunctionParams {
            delta: self.delta_center,
            v_c: self.v_c_mean,
            phi0: crate::device::DEFAULT_ATTEMPT_FREQUENCY_HZ,
            v0: 0.0,
            resistance: None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let delta =
            if self.delta_span > 0.0 { self.delta_center + self.delta_span * (rng.random::<f64>() - 0.5) } else { self.delta_center };
        let v_c = if self.v_c_std > 0.0 {
            let normal = Normal::new(self.v_c_mean, self.v_c_std).expect("validated std");
            loop {
                let v = normal.sample(rng);
                if v > 0.0 {
                    break v;
                }
            }
        } else {
            self.v_c_mean
        };
        (delta, v_c)
    }
}

#[derive(Clone, Debug)]
pub struct Population {
    params: Vec<JunctionParams>,
    states: Vec<JunctionState>,
    dead: Vec<bool>,
    range: (f64, f64),
    nominal: JunctionParams,
}

/// `n` evenly spaced values over `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

fn check_range(range: (f64, f64)) -> Result<()> {
    if range.0.is_finite() && range.1.is_finite() && range.0 < range.1 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name: "range", reason: "need v_min < v_max" })
    }
}

/// Build `n` junctions with biases spread evenly over `range` and parameters
/// drawn from `variability`.
pub fn build_population(n: usize, range: (f64, f64), variability: &VariabilitySpec, key: StreamKey) -> Result<Population> {
    if n < 2 {
        return Err(Error::InvalidParameter { name: "n", reason: "a population needs at least 2 junctions" });
    }
    check_range(range)?;
    variability.validate()?;
    let mut rng = key.child(purpose::BUILD).rng();
    let params = linspace(range.0, range.1, n)
        .into_iter()
        .map(|v0| {
            let (delta, v_c) = variability.sample(&mut rng);
            let p = JunctionParams { delta, v_c, ..variability.nominal() }.with_bias(v0);
            p.validate().map(|_| p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Population::assemble(params, range, variability.nominal(), key))
}

impl Population {
    fn assemble(params: Vec<JunctionParams>, range: (f64, f64), nominal: JunctionParams, key: StreamKey) -> Self {
        let mut rng = key.child(purpose::STATE).rng();
        let states = params
            .iter()
            .map(|_| JunctionState::new(if rng.random::<bool>() { Orientation::Parallel } else { Orientation::AntiParallel }))
            .collect();
        let dead = alloc::vec![false; params.len()];
        Population { params, states, dead, range, nominal }
    }

    /// Junctions with explicitly listed barriers and critical biases, tuned to
    /// evenly spaced biases over `range`.
    pub fn with_explicit_parameters(deltas: &[f64], v_cs: &[f64], range: (f64, f64), key: StreamKey) -> Result<Self> {
        crate::error::check_len(deltas.len(), v_cs.len())?;
        if deltas.len() < 2 {
            return Err(Error::InvalidParameter { name: "n", reason: "a population needs at least 2 junctions" });
        }
        check_range(range)?;
        let params = deltas
            .iter()
            .zip(v_cs)
            .zip(linspace(range.0, range.1, deltas.len()))
            .map(|((&d, &v), v0)| JunctionParams::new(d, v).map(|p| p.with_bias(v0)))
            .collect::<Result<Vec<_>>>()?;
        let n = deltas.len() as f64;
        let nominal = JunctionParams::new(deltas.iter().sum::<f64>() / n, v_cs.iter().sum::<f64>() / n)?;
        Ok(Self::assemble(params, range, nominal, key))
    }

    /// Population from fully specified junctions. Biases must be non-decreasing.
    pub fn from_params(params: Vec<JunctionParams>, range: (f64, f64), nominal: JunctionParams, key: StreamKey) -> Result<Self> {
        if params.len() < 2 {
            return Err(Error::InvalidParameter { name: "n", reason: "a population needs at least 2 junctions" });
        }
        check_range(range)?;
        for p in &params {
            p.validate()?;
        }
        if params.windows(2).any(|w| w[1].v0 < w[0].v0) {
            return Err(Error::InvalidParameter { name: "v0", reason: "biases must be non-decreasing" });
        }
        nominal.validate()?;
        Ok(Self::assemble(params, range, nominal, key))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[JunctionParams] {
        &self.params
    }

    pub fn states(&self) -> &[JunctionState] {
        &self.states
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    /// The central junction this population was drawn around.
    pub fn nominal(&self) -> &JunctionParams {
        &self.nominal
    }

    pub fn biases(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.v0).collect()
    }

    pub fn is_dead(&self, i: usize) -> bool {
        self.dead[i]
    }

    pub fn dead_mask(&self) -> &[bool] {
        &self.dead
    }

    pub fn dead_count(&self) -> usize {
        self.dead.iter().filter(|&&d| d).count()
    }

    /// Noise-free rates at `stimulus`; dead junctions report 0.
    pub fn analytic_rates(&self, stimulus: f64) -> Vec<f64> {
        self.params.iter().zip(&self.dead).map(|(p, &dead)| if dead { 0.0 } else { analytic_rate(p, stimulus - p.v0) }).collect()
    }

    /// Noise-free rates with a bias applied per junction.
    pub fn analytic_rates_driven(&self, v_eff: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len(self.len(), v_eff.len())?;
        Ok(self.params.iter().zip(&self.dead).zip(v_eff).map(|((p, &dead), &v)| if dead { 0.0 } else { analytic_rate(p, v) }).collect())
    }

    /// Mean natural rate of the live junctions.
    pub fn mean_natural_rate(&self) -> f64 {
        let live: Vec<f64> = self.params.iter().zip(&self.dead).filter(|(_, &d)| !d).map(|(p, _)| p.natural_rate()).collect();
        if live.is_empty() {
            0.0
        } else {
            live.iter().sum::<f64>() / live.len() as f64
        }
    }

    /// Rate-weighted mean of the biases.
    pub fn decode(&self, rates: &[f64]) -> Result<f64> {
        crate::error::check_len(self.len(), rates.len())?;
        let biases = self.biases();
        let masked: Vec<f64> = rates.iter().zip(&self.dead).map(|(&r, &d)| if d { 0.0 } else { r }).collect();
        decode(&biases, &masked)
    }

    /// Count transitions over `steps` time steps with every live junction
    /// biased at `stimulus - v0`.
    pub fn simulate_window(&mut self, stimulus: f64, steps: usize, dt: f64, key: StreamKey) -> RateWindow {
        let v_eff: Vec<f64> = self.params.iter().map(|p| stimulus - p.v0).collect();
        self.simulate(&v_eff, steps, dt, key)
    }

    /// Like [`simulate_window`](Self::simulate_window) with an explicit bias per junction.
    pub fn simulate_driven(&mut self, v_eff: &[f64], steps: usize, dt: f64, key: StreamKey) -> Result<RateWindow> {
        crate::error::check_len(self.len(), v_eff.len())?;
        Ok(self.simulate(v_eff, steps, dt, key))
    }

    fn simulate(&mut self, v_eff: &[f64], steps: usize, dt: f64, key: StreamKey) -> RateWindow {
        let mut transitions = alloc::vec![0u32; self.len()];
        for (i, count) in transitions.iter_mut().enumerate() {
            if self.dead[i] {
                continue;
            }
            let stepper = Stepper::new(&self.params[i], v_eff[i], dt);
            let mut rng = key.child(i as u64).rng();
            let mut state = self.states[i];
            for _ in 0..steps {
                let (next, flipped) = stepper.advance(state, &mut rng);
                state = next;
                *count += flipped as u32;
            }
            self.states[i] = state;
        }
        RateWindow { transitions, steps, dt }
    }

    /// Comparator-style acquisition: the state is sampled once per clock and
    /// an event is counted whenever two consecutive samples differ.
    ///
    /// The underlying trajectory is simulated in continuous time, so several
    /// switches inside one clock period collapse into at most one event. The
    /// exact number of switches on the same trajectory is returned alongside.
    pub fn sampled_event_count(&mut self, stimulus: f64, clock_dt: f64, cycles: usize, key: StreamKey) -> Result<SampledCounts> {
        let v_eff: Vec<f64> = self.params.iter().map(|p| stimulus - p.v0).collect();
        self.sampled_event_count_driven(&v_eff, clock_dt, cycles, key)
    }

    /// Clocked acquisition with an explicit bias per junction.
    pub fn sampled_event_count_driven(&mut self, v_eff: &[f64], clock_dt: f64, cycles: usize, key: StreamKey) -> Result<SampledCounts> {
        check_positive("clock_dt", clock_dt)?;
        crate::error::check_len(self.len(), v_eff.len())?;
        let n = self.len();
        let mut sampled = alloc::vec![0u32; n];
        let mut exact = alloc::vec![0u32; n];
        for i in 0..n {
            if self.dead[i] {
                continue;
            }
            let p = &self.params[i];
            let rates = escape_rates(p, v_eff[i]);
            let mut rng = key.child(i as u64).rng();
            let mut state = self.states[i].orientation;
            let dwell = |o: Orientation, rng: &mut crate::rng::SimRng| -> f64 {
                let phi = rates.from_state(o);
                if phi > 0.0 {
                    Exp::new(phi).map(|e| e.sample(rng)).unwrap_or(f64::INFINITY)
                } else {
                    f64::INFINITY
                }
            };
            // samples at t = 0, clock_dt, ..., (cycles - 1) * clock_dt
            let mut next_switch = dwell(state, &mut rng);
            let mut previous = state;
            for k in 1..cycles {
                let t = k as f64 * clock_dt;
                while next_switch <= t {
                    state = state.flipped();
                    exact[i] += 1;
                    next_switch += dwell(state, &mut rng);
                }
                if state != previous {
                    sampled[i] += 1;
                    previous = state;
                }
            }
            self.states[i] = JunctionState::new(state);
        }
        Ok(SampledCounts { sampled, exact, clock_dt, cycles })
    }

    /// Mark `round(fraction * n)` distinct junctions dead.
    pub fn kill_neurons(&self, fraction: f64, key: StreamKey) -> Result<Population> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidParameter { name: "fraction", reason: "must lie in [0, 1]" });
        }
        let mut out = self.clone();
        let k = libm::round(fraction * self.len() as f64) as usize;
        if k == 0 {
            return Ok(out);
        }
        let mut rng = key.child(purpose::FAULT).rng();
        for i in index::sample(&mut rng, self.len(), k) {
            out.dead[i] = true;
        }
        Ok(out)
    }
}

/// Rate-weighted mean of `biases`. Non-positive rates carry no weight.
pub fn decode(biases: &[f64], rates: &[f64]) -> Result<f64> {
    crate::error::check_len(biases.len(), rates.len())?;
    let (num, den) = biases.iter().zip(rates).filter(|(_, &r)| r > 0.0).fold((0.0, 0.0), |(n, d), (&v, &r)| (n + v * r, d + r));
    if den > 0.0 && den.is_finite() {
        Ok(num / den)
    } else {
        Err(Error::PopulationSilent)
    }
}

/// Transition counts from one simulated observation window.
#[derive(Clone, Debug, PartialEq)]
pub struct RateWindow {
    /// P->AP and AP->P switches per junction.
    pub transitions: Vec<u32>,
    pub steps: usize,
    pub dt: f64,
}

impl RateWindow {
    pub fn duration(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Full cycles per junction (two transitions per cycle).
    pub fn cycles(&self) -> Vec<f64> {
        self.transitions.iter().map(|&t| t as f64 / 2.0).collect()
    }

    /// Full-cycle rates in Hz. An empty window reports zeros.
    pub fn rates(&self) -> Vec<f64> {
        let d = self.duration();
        if d > 0.0 {
            self.transitions.iter().map(|&t| t as f64 / (2.0 * d)).collect()
        } else {
            alloc::vec![0.0; self.transitions.len()]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledCounts {
    /// Events seen by the clocked comparator.
    pub sampled: Vec<u32>,
    /// Switches that actually happened over the same trajectory.
    pub exact: Vec<u32>,
    pub clock_dt: f64,
    pub cycles: usize,
}

impl SampledCounts {
    pub fn duration(&self) -> f64 {
        self.cycles.saturating_sub(1) as f64 * self.clock_dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn three() -> Population {
        build_population(3, (-0.1, 0.1), &VariabilitySpec::scaled(), StreamKey::new(1)).unwrap()
    }

    #[test]
    fn linspace_biases() {
        let pop = three();
        let b = pop.biases();
        assert_relative_eq!(b[0], -0.1);
        assert_relative_eq!(b[1], 0.0);
        assert_relative_eq!(b[2], 0.1);
        assert!(pop.params().iter().all(|p| p.delta == 6.0 && p.v_c == 0.1));
    }

    #[test]
    fn rejects_bad_shapes() {
        let v = VariabilitySpec::scaled();
        assert!(build_population(1, (-0.1, 0.1), &v, StreamKey::new(0)).is_err());
        assert!(build_population(5, (0.1, -0.1), &v, StreamKey::new(0)).is_err());
        let bad = VariabilitySpec { delta_span: -1.0, ..v };
        assert!(build_population(5, (-0.1, 0.1), &bad, StreamKey::new(0)).is_err());
    }

    #[test]
    fn explicit_parameter_constructor() {
        let deltas = [16.5, 8.87, 18.58, 17.92, 12.95, 18.675, 11.75, 18.35, 12.14];
        let ics = [5e-4, 8.5e-5, 5.5e-4, 3.8e-4, 2.96e-4, 5.35e-4, 3e-4, 3.6e-4, 4.1e-4];
        let pop = Population::with_explicit_parameters(&deltas, &ics, (-3e-4, 3e-4), StreamKey::new(3)).unwrap();
        assert_eq!(pop.len(), 9);
        assert_eq!(pop.params()[1].delta, 8.87);
        assert_eq!(pop.params()[1].v_c, 8.5e-5);
        // natural rates span a few Hz to ~70 kHz
        let r0: Vec<f64> = pop.params().iter().map(|p| p.natural_rate()).collect();
        assert!(r0.iter().cloned().fold(f64::INFINITY, f64::min) < 10.0);
        assert_relative_eq!(r0[1], 70_000.0, max_relative = 0.01);
    }

    #[test]
    fn decode_examples() {
        let b = [-0.1, 0.0, 0.1];
        assert_relative_eq!(decode(&b, &[1.0, 1.0, 1.0]).unwrap(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(decode(&b, &[0.0, 0.0, 7.0]).unwrap(), 0.1);
        assert_relative_eq!(decode(&b, &[0.0, 1.0, 3.0]).unwrap(), 0.075);
        assert_eq!(decode(&b, &[0.0; 3]), Err(Error::PopulationSilent));
    }

    #[test]
    fn far_stimulus_suppresses_switching() {
        let mut pop = build_population(5, (-0.1, 0.1), &VariabilitySpec::scaled(), StreamKey::new(4)).unwrap();
        let w = pop.simulate_window(2.0, 1000, 183e-9, StreamKey::new(5));
        assert!(w.transitions.iter().all(|&t| t == 0));
        assert_relative_eq!(w.duration(), 1000.0 * 183e-9);
    }

    #[test]
    fn kill_counts_and_masks() {
        let pop = build_population(100, (-0.15, 0.15), &VariabilitySpec::scaled(), StreamKey::new(6)).unwrap();
        let same = pop.kill_neurons(0.0, StreamKey::new(1)).unwrap();
        assert_eq!(same.dead_count(), 0);
        let hurt = pop.kill_neurons(0.2, StreamKey::new(1)).unwrap();
        assert_eq!(hurt.dead_count(), 20);
        assert_eq!(hurt.params(), pop.params());
        let rates = hurt.analytic_rates(0.0);
        for (i, &r) in rates.iter().enumerate() {
            if hurt.is_dead(i) {
                assert_eq!(r, 0.0);
            }
        }
        let all = pop.kill_neurons(1.0, StreamKey::new(1)).unwrap();
        assert_eq!(all.decode(&all.analytic_rates(0.0)), Err(Error::PopulationSilent));
        assert!(pop.kill_neurons(1.5, StreamKey::new(1)).is_err());
    }

    #[test]
    fn sampled_counts_edge_cases() {
        let mut pop = build_population(4, (-0.1, 0.1), &VariabilitySpec::scaled(), StreamKey::new(7)).unwrap();
        let one = pop.sampled_event_count(0.0, 1.0, 1, StreamKey::new(8)).unwrap();
        assert!(one.sampled.iter().all(|&c| c == 0));
        // at a huge bias a junction relaxes into the stable state at most once
        let frozen = pop.sampled_event_count(5.0, 40e-9, 400, StreamKey::new(9)).unwrap();
        assert!(frozen.sampled.iter().all(|&c| c <= 1));
        assert_eq!(frozen.sampled, frozen.exact);
        assert!(pop.sampled_event_count(0.0, 0.0, 10, StreamKey::new(9)).is_err());
    }
}
