//! Power and energy of junction populations.
//!
//! Each junction dissipates `V^2 / R` for the bias that shifts its tuning
//! curve plus the stimulus voltage applied on top. Energy is power times the
//! observation window.

use alloc::vec::Vec;

use crate::basis::RateMode;
use crate::error::{check_positive, Result};
use crate::learning::TransformSystem;
use crate::population::Population;
use crate::rng::StreamKey;

/// How stimulus power is accounted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StimulusPower {
    /// Every junction sees the maximal stimulus voltage.
    WorstCase,
    /// Mean of the squared stimulus values actually presented.
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyConfig {
    /// Resistance-area product in ohm * um^2.
    pub ra_product: f64,
    /// Junction diameter in meters.
    pub diameter: f64,
    pub v_stim_max: f64,
    /// Step duration of the observation window.
    pub dt: f64,
    pub stimulus: StimulusPower,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig { ra_product: 20.0, diameter: 7.7e-9, v_stim_max: 0.1, dt: 183e-9, stimulus: StimulusPower::WorstCase }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("ra_product", self.ra_product)?;
        check_positive("diameter", self.diameter)?;
        check_positive("v_stim_max", self.v_stim_max)?;
        check_positive("dt", self.dt)
    }
}

/// `R = RA / (pi d^2 / 4)`.
pub fn junction_resistance(cfg: &EnergyConfig) -> f64 {
    let d_um = cfg.diameter * 1e6;
    cfg.ra_product / (core::f64::consts::PI * d_um * d_um / 4.0)
}

/// `sum_i v_i^2 / R` over the given biases.
pub fn bias_power(biases: &[f64], resistance: f64) -> f64 {
    biases.iter().map(|v| v * v).sum::<f64>() / resistance
}

/// Power spent holding the live junctions of `pop` at their tuning biases.
/// Junctions with their own resistance use it; the rest use the config value.
pub fn shift_power(pop: &Population, cfg: &EnergyConfig) -> f64 {
    let r = junction_resistance(cfg);
    pop.params().iter().zip(pop.dead_mask()).filter(|(_, &dead)| !dead).map(|(p, _)| p.v0 * p.v0 / p.resistance.unwrap_or(r)).sum()
}

/// Worst-case stimulus power `n v_max^2 / R`.
pub fn stimulus_power(n: usize, cfg: &EnergyConfig) -> f64 {
    n as f64 * cfg.v_stim_max * cfg.v_stim_max / junction_resistance(cfg)
}

/// Stimulus power averaged over the presented stimulus values.
pub fn stimulus_power_average(n: usize, stimuli: &[f64], cfg: &EnergyConfig) -> f64 {
    if stimuli.is_empty() {
        return 0.0;
    }
    let mean_sq = stimuli.iter().map(|s| s * s).sum::<f64>() / stimuli.len() as f64;
    n as f64 * mean_sq / junction_resistance(cfg)
}

/// Shift plus stimulus power for one population.
pub fn population_power(pop: &Population, stimuli: &[f64], cfg: &EnergyConfig) -> f64 {
    let n = pop.len() - pop.dead_count();
    let stim = match cfg.stimulus {
        StimulusPower::WorstCase => stimulus_power(n, cfg),
        StimulusPower::Average => stimulus_power_average(n, stimuli, cfg),
    };
    shift_power(pop, cfg) + stim
}

/// Total power of every input and output population of a system.
pub fn system_power(system: &TransformSystem, stimuli: &[f64], cfg: &EnergyConfig) -> f64 {
    system.inputs().iter().chain(system.outputs()).map(|p| population_power(p, stimuli, cfg)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub steps: usize,
    pub window_s: f64,
    pub energy_j: f64,
    pub error_pct: f64,
    pub error_std: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergySweep {
    pub points: Vec<SweepPoint>,
    /// Window lengths left out because no events can be observed in them.
    pub excluded: Vec<usize>,
    pub power_w: f64,
}

/// Error and energy of a trained system for each observation window length
/// (in steps of `cfg.dt`).
pub fn precision_energy_sweep(
    system: &TransformSystem,
    windows: &[usize],
    cfg: &EnergyConfig,
    trials: usize,
    key: StreamKey,
) -> Result<EnergySweep> {
    cfg.validate()?;
    let probe_stimuli = sample_stimuli(system, trials, key);
    let power_w = system_power(system, &probe_stimuli, cfg);
    let mut sweep = EnergySweep { power_w, ..Default::default() };
    for (k, &steps) in windows.iter().enumerate() {
        if steps == 0 {
            sweep.excluded.push(steps);
            continue;
        }
        let window_s = steps as f64 * cfg.dt;
        let stats = system.evaluate_with(trials, RateMode::MonteCarlo { steps, dt: cfg.dt }, key.child(k as u64))?;
        sweep.points.push(SweepPoint { steps, window_s, energy_j: power_w * window_s, error_pct: stats.mean, error_std: stats.std });
    }
    Ok(sweep)
}

fn sample_stimuli(system: &TransformSystem, trials: usize, key: StreamKey) -> Vec<f64> {
    (0..trials).flat_map(|t| system.draw_stimuli(key.child(t as u64))).collect()
}
