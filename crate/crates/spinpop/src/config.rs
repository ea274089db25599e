//! Experiment configuration.
//!
//! One TOML file holds a section per subcommand; every section has defaults,
//! so an empty file reproduces the reference experiments. Unknown keys are
//! rejected. Keys of physical quantities carry their unit as a suffix.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spinpop_core::basis::RateMode;
use spinpop_core::datapath::{CostConfig, DatapathConfig};
use spinpop_core::device::{JunctionParams, DEFAULT_ATTEMPT_FREQUENCY_HZ};
use spinpop_core::energy::{EnergyConfig, StimulusPower};
use spinpop_core::learning::{transform_library, ChainLayout, ChainTraining, InversionModel, LearnConfig, Transform};
use spinpop_core::population::{build_population, Population, VariabilitySpec};
use spinpop_core::rng::StreamKey;

use crate::error::ConfigError;

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Rates,
    Fit,
    Basis,
    Learn,
    Sweep,
    Datapath,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Rates => "rates",
            Command::Fit => "fit",
            Command::Basis => "basis",
            Command::Learn => "learn",
            Command::Sweep => "sweep",
            Command::Datapath => "datapath",
        }
    }
}

/// How rates are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mc,
    Analytic,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// When set, the file may only be used with this subcommand.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<Command>,
    pub seed: u64,
    /// Overrides the per-command default (analytic for `basis`, Monte Carlo
    /// elsewhere).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub rates: RatesConfig,
    pub fit: FitConfig,
    pub basis: BasisConfig,
    pub learn: LearnSection,
    pub sweep: SweepConfig,
    pub energy: EnergySection,
    pub datapath: DatapathSection,
    /// Directory relative paths in the file are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.message().to_string() + &span_hint(text, e.span()) })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text, path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn mode_for(&self, cmd: Command) -> Mode {
        self.mode.unwrap_or(match cmd {
            Command::Basis => Mode::Analytic,
            _ => Mode::Mc,
        })
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => format!(" (line {})", text[..s.start.min(text.len())].lines().count().max(1)),
        None => String::new(),
    }
}

/// Device-to-device spread. Defaults to the measured distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariabilityConfig {
    pub delta_center: f64,
    /// Full width of the uniform barrier distribution, in k_B T.
    pub delta_span: f64,
    #[serde(rename = "v_c_mean_V")]
    pub v_c_mean: f64,
    #[serde(rename = "v_c_std_V")]
    pub v_c_std: f64,
}

impl Default for VariabilityConfig {
    fn default() -> Self {
        Self::from(VariabilitySpec::experimental())
    }
}

impl From<VariabilitySpec> for VariabilityConfig {
    fn from(v: VariabilitySpec) -> Self {
        VariabilityConfig { delta_center: v.delta_center, delta_span: v.delta_span, v_c_mean: v.v_c_mean, v_c_std: v.v_c_std }
    }
}

impl VariabilityConfig {
    pub fn spec(&self, section: &str) -> Result<VariabilitySpec> {
        let v = VariabilitySpec {
            delta_center: self.delta_center,
            delta_span: self.delta_span,
            v_c_mean: self.v_c_mean,
            v_c_std: self.v_c_std,
        };
        v.validate().map_err(|e| ConfigError::from_core(&format!("{section}.variability"), e))?;
        Ok(v)
    }
}

/// Barriers and critical currents of the nine measured junctions.
pub const REFERENCE_DELTAS: [f64; 9] = [16.5, 8.87, 18.58, 17.92, 12.95, 18.675, 11.75, 18.35, 12.14];
pub const REFERENCE_CRITICAL_A: [f64; 9] = [5e-4, 8.5e-5, 5.5e-4, 3.8e-4, 2.96e-4, 5.35e-4, 3e-4, 3.6e-4, 4.1e-4];
/// Current range the nine junctions are tuned over.
pub const REFERENCE_RANGE_A: (f64, f64) = (-3e-4, 3e-4);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationConfig {
    /// The nine measured junctions, current biased.
    #[default]
    Reference9,
    /// Listed junctions tuned to evenly spaced biases. Current-biased
    /// devices may use the `_A` spellings.
    Explicit {
        deltas: Vec<f64>,
        #[serde(rename = "v_c_V", alias = "i_c_A")]
        v_c: Vec<f64>,
        #[serde(rename = "range_V", alias = "range_A")]
        range: [f64; 2],
    },
    /// `n` junctions drawn from a variability distribution.
    Random {
        n: usize,
        #[serde(rename = "range_V")]
        range: [f64; 2],
        #[serde(default)]
        variability: VariabilityConfig,
    },
}

impl PopulationConfig {
    pub fn build(&self, section: &str, key: StreamKey) -> Result<Population> {
        let key_name = format!("{section}.population");
        let pop = match self {
            PopulationConfig::Reference9 => {
                Population::with_explicit_parameters(&REFERENCE_DELTAS, &REFERENCE_CRITICAL_A, REFERENCE_RANGE_A, key)
            }
            PopulationConfig::Explicit { deltas, v_c, range } => {
                if deltas.is_empty() {
                    return Err(ConfigError::invalid(format!("{key_name}.deltas"), "population is empty"));
                }
                Population::with_explicit_parameters(deltas, v_c, (range[0], range[1]), key)
            }
            PopulationConfig::Random { n, range, variability } => {
                if *n == 0 {
                    return Err(ConfigError::invalid(format!("{key_name}.n"), "population is empty"));
                }
                build_population(*n, (range[0], range[1]), &variability.spec(&key_name)?, key)
            }
        };
        pop.map_err(|e| ConfigError::from_core(&key_name, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesConfig {
    pub population: PopulationConfig,
    /// Bias points per tuning curve.
    pub points: usize,
    /// Bias grid; defaults to the population range widened by a quarter on
    /// each side. Same unit as the population range.
    #[serde(rename = "bias_range_V", alias = "bias_range_A", skip_serializing_if = "Option::is_none")]
    pub bias_range: Option<[f64; 2]>,
    /// Monte Carlo steps per bias point.
    pub steps: usize,
    /// Monte Carlo step; defaults to a twentieth of the fastest dwell time.
    #[serde(rename = "dt_s", skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig { population: PopulationConfig::Reference9, points: 41, bias_range: None, steps: 100_000, dt: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceInput {
    pub file: PathBuf,
    #[serde(rename = "bias_V", alias = "bias_A")]
    pub bias: f64,
    /// Defaults to the midpoint between the lowest and highest sample.
    #[serde(rename = "threshold_ohm", skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Two-column table of `(bias, rate_Hz)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_table: Option<PathBuf>,
    /// Resistance traces, one per bias point.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<TraceInput>,
    #[serde(rename = "phi0_Hz")]
    pub phi0: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { rate_table: None, traces: Vec::new(), phi0: DEFAULT_ATTEMPT_FREQUENCY_HZ }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisTarget {
    Barometric,
    Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    pub population: PopulationConfig,
    pub target: BasisTarget,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_file: Option<PathBuf>,
    /// Stimulus samples across the population range.
    pub stimuli: usize,
    /// Divide each junction's rates by its natural rate before solving.
    pub normalize: bool,
    pub steps: usize,
    #[serde(rename = "dt_s", skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            population: PopulationConfig::Reference9,
            target: BasisTarget::Barometric,
            trajectory_file: None,
            stimuli: 50,
            normalize: true,
            steps: 100_000,
            dt: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inversion {
    PerJunction,
    Nominal,
}

impl From<Inversion> for InversionModel {
    fn from(i: Inversion) -> Self {
        match i {
            Inversion::PerJunction => InversionModel::PerJunction,
            Inversion::Nominal => InversionModel::Nominal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainTrainingConfig {
    Isolated,
    Joint,
    Sequential,
}

impl From<ChainTrainingConfig> for ChainTraining {
    fn from(c: ChainTrainingConfig) -> Self {
        match c {
            ChainTrainingConfig::Isolated => ChainTraining::Isolated,
            ChainTrainingConfig::Joint => ChainTraining::Joint,
            ChainTrainingConfig::Sequential => ChainTraining::Sequential,
        }
    }
}

/// Settings of the `series` task (sine then square through a middle population).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    pub training: ChainTrainingConfig,
    #[serde(rename = "middle_margin_V")]
    pub middle_margin: f64,
    #[serde(rename = "output_margin_V")]
    pub output_margin: f64,
}

impl Default for ChainSection {
    fn default() -> Self {
        let l = ChainLayout::default();
        ChainSection { training: ChainTrainingConfig::Joint, middle_margin: l.middle_margin, output_margin: l.output_margin }
    }
}

/// What a learning task trains.
#[derive(Clone, Debug, PartialEq)]
pub enum Task {
    Single(Transform),
    /// Sine then square through an intermediate population.
    Series,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnSection {
    /// A transform name, or `series` for the two-stage sine-square chain.
    pub transform: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    pub n_in: usize,
    pub n_out: usize,
    pub variability: VariabilityConfig,
    pub alpha: f64,
    /// Fraction of the output range.
    pub catch_halfwidth: f64,
    pub steps: usize,
    pub eval_trials: usize,
    pub eval_every: usize,
    /// Observation window, in steps of `dt_s`.
    pub window_steps: usize,
    #[serde(rename = "dt_s")]
    pub dt: f64,
    pub inversion: Inversion,
    pub rate_floor_fraction: f64,
    /// Input population sizes to sweep; empty trains a single system.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sizes: Vec<usize>,
    /// Independent seeds per size in a size sweep.
    pub repeats: usize,
    pub chain: ChainSection,
}

impl Default for LearnSection {
    fn default() -> Self {
        let d = LearnConfig::default();
        let RateMode::MonteCarlo { steps: window_steps, dt } = d.mode else { unreachable!() };
        LearnSection {
            transform: "identity".into(),
            params: Vec::new(),
            n_in: 100,
            n_out: 100,
            variability: VariabilityConfig::default(),
            alpha: d.alpha,
            catch_halfwidth: d.catch_halfwidth,
            steps: d.steps,
            eval_trials: d.eval_trials,
            eval_every: d.eval_every,
            window_steps,
            dt,
            inversion: Inversion::PerJunction,
            rate_floor_fraction: d.rate_floor_fraction,
            sizes: Vec::new(),
            repeats: 1,
            chain: ChainSection::default(),
        }
    }
}

impl LearnSection {
    pub fn task(&self) -> Result<Task> {
        if self.transform == "series" {
            return Ok(Task::Series);
        }
        transform_library(&self.transform, &self.params).map(Task::Single).map_err(|e| ConfigError::from_core("learn.transform", e))
    }

    pub fn learn_config(&self, mode: Mode) -> Result<LearnConfig> {
        let rate_mode = match mode {
            Mode::Mc => RateMode::MonteCarlo { steps: self.window_steps, dt: self.dt },
            Mode::Analytic => RateMode::Analytic,
        };
        if mode == Mode::Mc && self.window_steps == 0 {
            return Err(ConfigError::invalid("learn.window_steps", "must be >= 1"));
        }
        let cfg = LearnConfig {
            alpha: self.alpha,
            catch_halfwidth: self.catch_halfwidth,
            f0_norm: None,
            steps: self.steps,
            eval_trials: self.eval_trials,
            eval_every: self.eval_every,
            mode: rate_mode,
            rate_floor_fraction: self.rate_floor_fraction,
            inversion: self.inversion.into(),
        };
        cfg.validate().map_err(|e| ConfigError::from_core("learn", e))?;
        if self.eval_trials == 0 {
            return Err(ConfigError::invalid("learn.eval_trials", "must be >= 1"));
        }
        Ok(cfg)
    }

    pub fn layout(&self) -> Result<ChainLayout> {
        let l = ChainLayout { middle_margin: self.chain.middle_margin, output_margin: self.chain.output_margin };
        l.validate().map_err(|e| ConfigError::from_core("learn.chain", e))?;
        Ok(l)
    }

    /// Check everything a learning run needs.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        self.learn_config(mode)?;
        self.variability.spec("learn")?;
        let task = self.task()?;
        if self.n_in < 2 || self.n_out < 2 {
            return Err(ConfigError::invalid("learn.n_in", "populations need at least 2 junctions"));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n < 2) {
            return Err(ConfigError::invalid("learn.sizes", format!("size {n} is below 2")));
        }
        if !self.sizes.is_empty() && task == Task::Series {
            return Err(ConfigError::invalid("learn.sizes", "size sweeps need a single-stage transform"));
        }
        if self.repeats == 0 {
            return Err(ConfigError::invalid("learn.repeats", "must be >= 1"));
        }
        if task == Task::Series {
            self.layout()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Full width of the barrier distribution, in k_B T.
    DeltaSpan,
    /// Standard deviation of the critical voltage as a fraction of its mean.
    VcStd,
    /// Observation windows of a trained system, see `windows_steps`.
    Energy,
    /// Fraction of junctions removed after training.
    Fault,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub kind: SweepKind,
    /// Sweep points for the variability and fault sweeps.
    pub values: Vec<f64>,
    /// Window lengths of the energy sweep, in steps of `energy.dt_s`.
    pub windows_steps: Vec<usize>,
    /// Independent seeds per sweep point.
    pub repeats: usize,
    /// Re-learning steps after junction loss.
    pub relearn_steps: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            kind: SweepKind::DeltaSpan,
            values: vec![0.0, 4.0, 9.65, 20.0, 24.0, 26.0],
            windows_steps: vec![1, 2, 5, 10, 20, 50, 100, 200],
            repeats: 1,
            relearn_steps: 3000,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(ConfigError::invalid("sweep.repeats", "must be >= 1"));
        }
        match self.kind {
            SweepKind::Energy if self.windows_steps.is_empty() => Err(ConfigError::invalid("sweep.windows_steps", "no windows given")),
            SweepKind::Energy => Ok(()),
            _ if self.values.is_empty() => Err(ConfigError::invalid("sweep.values", "no sweep points given")),
            SweepKind::Fault if self.values.iter().any(|f| !(0.0..1.0).contains(f)) => {
                Err(ConfigError::invalid("sweep.values", "loss fractions must lie in [0, 1)"))
            }
            _ if self.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) => {
                Err(ConfigError::invalid("sweep.values", "must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusAccounting {
    WorstCase,
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySection {
    #[serde(rename = "ra_ohm_um2")]
    pub ra_product: f64,
    #[serde(rename = "diameter_m")]
    pub diameter: f64,
    #[serde(rename = "v_stim_max_V")]
    pub v_stim_max: f64,
    #[serde(rename = "dt_s")]
    pub dt: f64,
    pub stimulus: StimulusAccounting,
}

impl Default for EnergySection {
    fn default() -> Self {
        let e = EnergyConfig::default();
        EnergySection {
            ra_product: e.ra_product,
            diameter: e.diameter,
            v_stim_max: e.v_stim_max,
            dt: e.dt,
            stimulus: StimulusAccounting::WorstCase,
        }
    }
}

impl EnergySection {
    pub fn config(&self) -> Result<EnergyConfig> {
        let stimulus = match self.stimulus {
            StimulusAccounting::WorstCase => StimulusPower::WorstCase,
            StimulusAccounting::Average => StimulusPower::Average,
        };
        let cfg = EnergyConfig { ra_product: self.ra_product, diameter: self.diameter, v_stim_max: self.v_stim_max, dt: self.dt, stimulus };
        cfg.validate().map_err(|e| ConfigError::from_core("energy", e))?;
        Ok(cfg)
    }
}

/// Per-event energies (J) and block areas (um^2). Every key is required.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostsConfig {
    pub e_comparator_cycle: f64,
    pub e_mac: f64,
    pub e_mram_read_bit: f64,
    pub e_mram_write_bit: f64,
    pub e_counter_tick: f64,
    pub area_cmos: f64,
    pub area_mram: f64,
    pub area_junctions: f64,
}

impl From<CostConfig> for CostsConfig {
    fn from(c: CostConfig) -> Self {
        CostsConfig {
            e_comparator_cycle: c.e_comparator_cycle,
            e_mac: c.e_mac,
            e_mram_read_bit: c.e_mram_read_bit,
            e_mram_write_bit: c.e_mram_write_bit,
            e_counter_tick: c.e_counter_tick,
            area_cmos: c.area_cmos,
            area_mram: c.area_mram,
            area_junctions: c.area_junctions,
        }
    }
}

impl From<CostsConfig> for CostConfig {
    fn from(c: CostsConfig) -> Self {
        CostConfig {
            e_comparator_cycle: c.e_comparator_cycle,
            e_mac: c.e_mac,
            e_mram_read_bit: c.e_mram_read_bit,
            e_mram_write_bit: c.e_mram_write_bit,
            e_counter_tick: c.e_counter_tick,
            area_cmos: c.area_cmos,
            area_mram: c.area_mram,
            area_junctions: c.area_junctions,
        }
    }
}

impl CostsConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.message().to_string() + &span_hint(&text, e.span()) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatapathSection {
    pub transform: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    pub n_in: usize,
    pub n_out: usize,
    pub steps: usize,
    pub variability: VariabilityConfig,
    pub frac_bits: u8,
    pub weight_scale: f64,
    pub alpha: f64,
    pub catch_halfwidth: f64,
    #[serde(rename = "clock_s")]
    pub clock: f64,
    pub cycles: usize,
    #[serde(rename = "range_V")]
    pub range: [f64; 2],
    pub inversion: Inversion,
    pub rate_floor_fraction: f64,
    /// `false` runs inference only: no learning phase, no MRAM writes.
    pub learn: bool,
    pub eval_trials: usize,
    pub eval_every: usize,
    /// Also train the float model on the same task for comparison.
    pub float_reference: bool,
    #[serde(rename = "ra_ohm_um2")]
    pub ra_product: f64,
    #[serde(rename = "diameter_m")]
    pub diameter: f64,
    /// Cost file; takes the place of an inline `[datapath.costs]` table.
    /// With neither, the 128x128 reference costs apply.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub costs_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostsConfig>,
}

impl Default for DatapathSection {
    fn default() -> Self {
        let d = DatapathConfig::default();
        DatapathSection {
            transform: "identity".into(),
            params: Vec::new(),
            n_in: 100,
            n_out: 100,
            steps: 3000,
            variability: VariabilitySpec::scaled().into(),
            frac_bits: d.frac_bits,
            weight_scale: d.weight_scale,
            alpha: d.alpha,
            catch_halfwidth: d.catch_halfwidth,
            clock: d.clock_period,
            cycles: d.acquisition_cycles,
            range: [d.range.0, d.range.1],
            inversion: Inversion::PerJunction,
            rate_floor_fraction: d.rate_floor_fraction,
            learn: d.learn,
            eval_trials: d.eval_trials,
            eval_every: d.eval_every,
            float_reference: true,
            ra_product: d.energy.ra_product,
            diameter: d.energy.diameter,
            costs_file: None,
            costs: None,
        }
    }
}

impl DatapathSection {
    pub fn transform(&self) -> Result<Transform> {
        let t = transform_library(&self.transform, &self.params).map_err(|e| ConfigError::from_core("datapath.transform", e))?;
        if t.arity() != (1, 1) {
            return Err(ConfigError::invalid("datapath.transform", "the datapath handles one input and one output"));
        }
        Ok(t)
    }

    pub fn datapath_config(&self) -> Result<DatapathConfig> {
        let d = DatapathConfig::default();
        let cfg = DatapathConfig {
            frac_bits: self.frac_bits,
            weight_scale: self.weight_scale,
            alpha: self.alpha,
            catch_halfwidth: self.catch_halfwidth,
            clock_period: self.clock,
            acquisition_cycles: self.cycles,
            range: (self.range[0], self.range[1]),
            inversion: self.inversion.into(),
            rate_floor_fraction: self.rate_floor_fraction,
            learn: self.learn,
            energy: EnergyConfig { ra_product: self.ra_product, diameter: self.diameter, ..d.energy },
            eval_trials: self.eval_trials,
            eval_every: self.eval_every,
        };
        cfg.validate().map_err(|e| ConfigError::from_core("datapath", e))?;
        if self.eval_trials == 0 {
            return Err(ConfigError::invalid("datapath.eval_trials", "must be >= 1"));
        }
        Ok(cfg)
    }

    /// Ledger costs from the cost file or the inline table.
    pub fn cost_config(&self, cfg: &ExperimentConfig) -> Result<CostConfig> {
        let costs = match (&self.costs_file, &self.costs) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::invalid("datapath.costs_file", "give either a cost file or an inline cost table"))
            }
            (Some(p), None) => CostsConfig::load(&cfg.resolve(p))?,
            (None, Some(c)) => *c,
            (None, None) => CostConfig::default().into(),
        };
        let c: CostConfig = costs.into();
        c.validate().map_err(|e| ConfigError::from_core("datapath.costs", e))?;
        Ok(c)
    }

    pub fn validate(&self, cfg: &ExperimentConfig) -> Result<()> {
        self.transform()?;
        self.datapath_config()?;
        self.cost_config(cfg)?;
        self.variability.spec("datapath")?;
        if self.n_in < 2 || self.n_out < 2 {
            return Err(ConfigError::invalid("datapath.n_in", "populations need at least 2 junctions"));
        }
        Ok(())
    }
}

/// Fastest natural rate of a population, used to size Monte Carlo steps.
pub fn fastest_rate(params: &[JunctionParams]) -> f64 {
    params.iter().map(|p| p.natural_rate()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.learn.alpha, 0.001);
        assert_eq!(cfg.mode_for(Command::Basis), Mode::Analytic);
        assert_eq!(cfg.mode_for(Command::Learn), Mode::Mc);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("[learn]\nalpah = 0.1\n", Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("alpah"), "{err}");
        let err =
            ExperimentConfig::from_toml("[rates.population]\nkind = \"random\"\nn = 3\nrange_V = [0, 1]\nbogus = 1\n", Path::new("x.toml"));
        assert!(err.is_err());
    }

    #[test]
    fn unit_suffixed_keys_parse() {
        let text = "[learn]\ndt_s = 1e-3\n[rates.population]\nkind = \"explicit\"\ndeltas = [6, 6]\ni_c_A = [1e-4, 1e-4]\nrange_A = [-1e-4, 1e-4]\n";
        let cfg = ExperimentConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.learn.dt, 1e-3);
        let PopulationConfig::Explicit { v_c, range, .. } = &cfg.rates.population else { panic!() };
        assert_eq!(v_c, &vec![1e-4, 1e-4]);
        assert_eq!(range, &[-1e-4, 1e-4]);
    }

    #[test]
    fn missing_cost_key_is_an_error() {
        let text = "[datapath.costs]\ne_comparator_cycle = 1e-16\ne_mac = 1e-13\n";
        let err = ExperimentConfig::from_toml(text, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("missing field"), "{err}");
    }

    #[test]
    fn invalid_values_name_their_key() {
        let mut cfg = ExperimentConfig::default();
        cfg.learn.alpha = -1.0;
        let err = cfg.learn.validate(Mode::Mc).unwrap_err();
        assert!(err.to_string().contains("learn.alpha"), "{err}");
        cfg.learn.alpha = 0.001;
        cfg.learn.transform = "cube".into();
        assert!(cfg.learn.validate(Mode::Mc).is_err());
        cfg.learn.transform = "series".into();
        assert!(cfg.learn.validate(Mode::Mc).is_ok());
    }

    #[test]
    fn empty_population_is_rejected() {
        let pop = PopulationConfig::Explicit { deltas: vec![], v_c: vec![], range: [0.0, 1.0] };
        assert!(pop.build("rates", StreamKey::new(0)).is_err());
    }
}
