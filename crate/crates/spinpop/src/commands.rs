//! The experiment subcommands.
//!
//! Each command first turns its config section into a fully validated plan,
//! so configuration errors surface before any simulation, then runs it and
//! writes its data files through a [`RunWriter`].

use std::path::Path;

use serde_json::json;
use spinpop_core::basis::{barometric_target, fit_curve, measure_basis, BasisMatrix, RateMode, Trajectory};
use spinpop_core::datapath::{run_system, CostConfig, DatapathConfig, DatapathRun, EnergyReport, Phase, Technology};
use spinpop_core::device::{analytic_rate, escape_rates, fit_params, rate_from_trace, JunctionState, Orientation, Stepper};
use spinpop_core::energy::{precision_energy_sweep, EnergyConfig};
use spinpop_core::learning::{
    relearn_after_fault, run_learning, Chain, ChainLayout, ChainTraining, LearnConfig, LearningCurve, TaskSpec, Transform, TransformSystem,
};
use spinpop_core::population::{linspace, Population, VariabilitySpec};
use spinpop_core::rng::{purpose, StreamKey};

use crate::config::{fastest_rate, BasisTarget, Command, ExperimentConfig, Mode, SweepKind, Task};
use crate::error::{ConfigError, Result};
use crate::io::{csv_table, fmt_f64, read_rate_table, read_trace, read_trajectory, weights_to_text};
use crate::manifest::{RunManifest, RunWriter};

/// Relative tolerance and smoothing window used to locate
/// where a learning curve settles.
const SETTLE_TOLERANCE: f64 = 0.1;
const SETTLE_SMOOTHING: usize = 4;

/// Validate, run and record one subcommand.
pub fn execute(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    if let Some(kind) = cfg.kind {
        if kind != cmd {
            return Err(ConfigError::invalid("kind", format!("config is for `{}`, not `{}`", kind.name(), cmd.name())).into());
        }
    }
    let mode = cfg.mode_for(cmd);
    let root = StreamKey::new(cfg.seed);
    let plan = Plan::prepare(cmd, cfg, mode, root)?;
    let mut writer = RunWriter::create(out)?;
    writer.write("config.toml", cfg.to_toml().as_bytes())?;
    match plan {
        Plan::Rates(p) => rates(p, mode, root, &mut writer)?,
        Plan::Fit(p) => fit(p, &mut writer)?,
        Plan::Basis(p) => basis(p, mode, root, &mut writer)?,
        Plan::Learn(p) => learn(p, root, &mut writer)?,
        Plan::Sweep(p) => sweep(p, root, &mut writer)?,
        Plan::Datapath(p) => datapath(p, root, &mut writer)?,
    }
    writer.finish(cmd.name(), &cfg.to_toml(), cfg.seed)
}

enum Plan {
    Rates(RatesPlan),
    Fit(FitPlan),
    Basis(BasisPlan),
    Learn(LearnPlan),
    Sweep(SweepPlan),
    Datapath(DatapathPlan),
}

struct RatesPlan {
    pop: Population,
    grid: Vec<f64>,
    steps: usize,
    dt: Option<f64>,
}

struct FitPlan {
    samples: Vec<(f64, f64)>,
    phi0: f64,
}

struct BasisPlan {
    pop: Population,
    stimuli: Vec<f64>,
    targets: Vec<(&'static str, Vec<f64>)>,
    /// Curve parameter of each stimulus, for trajectory targets.
    curve_t: Option<Vec<f64>>,
    normalize: bool,
    rate_mode: RateMode,
}

#[derive(Clone)]
struct LearnPlan {
    task: Task,
    n_in: usize,
    n_out: usize,
    variability: VariabilitySpec,
    cfg: LearnConfig,
    sizes: Vec<usize>,
    repeats: usize,
    layout: ChainLayout,
    chain_training: ChainTraining,
}

impl LearnPlan {
    fn transform(&self) -> Option<Transform> {
        match self.task {
            Task::Single(t) => Some(t),
            Task::Series => None,
        }
    }

    fn spec(&self, n_in: usize, variability: VariabilitySpec) -> TaskSpec {
        let t = self.transform().expect("single-stage task");
        let mut task = TaskSpec::new(t, n_in, self.n_out, variability);
        task.input_sizes = vec![n_in; t.arity().0];
        task
    }
}

struct SweepPlan {
    learn: LearnPlan,
    kind: SweepKind,
    values: Vec<f64>,
    windows: Vec<usize>,
    repeats: usize,
    relearn_steps: usize,
    energy: EnergyConfig,
}

struct DatapathPlan {
    transform: Transform,
    n_in: usize,
    n_out: usize,
    steps: usize,
    variability: VariabilitySpec,
    cfg: DatapathConfig,
    costs: CostConfig,
    float_reference: bool,
}

impl Plan {
    fn prepare(cmd: Command, cfg: &ExperimentConfig, mode: Mode, root: StreamKey) -> Result<Plan, ConfigError> {
        Ok(match cmd {
            Command::Rates => {
                let r = &cfg.rates;
                let pop = r.population.build("rates", root.child(purpose::BUILD))?;
                if r.points < 2 {
                    return Err(ConfigError::invalid("rates.points", "need at least 2 bias points"));
                }
                let (lo, hi) = match r.bias_range {
                    Some([lo, hi]) => (lo, hi),
                    None => {
                        let (lo, hi) = pop.range();
                        let w = hi - lo;
                        (lo - w / 4.0, hi + w / 4.0)
                    }
                };
                if !(hi > lo) {
                    return Err(ConfigError::invalid("rates.bias_range_V", "must be increasing"));
                }
                if mode == Mode::Mc && r.steps == 0 {
                    return Err(ConfigError::invalid("rates.steps", "must be >= 1"));
                }
                if let Some(dt) = r.dt {
                    if !(dt > 0.0) || !dt.is_finite() {
                        return Err(ConfigError::invalid("rates.dt_s", "must be finite and > 0"));
                    }
                }
                Plan::Rates(RatesPlan { pop, grid: linspace(lo, hi, r.points), steps: r.steps, dt: r.dt })
            }
            Command::Fit => {
                let f = &cfg.fit;
                let mut samples = Vec::new();
                if let Some(p) = &f.rate_table {
                    samples.extend(read_rate_table(&cfg.resolve(p))?);
                }
                for (k, tr) in f.traces.iter().enumerate() {
                    let path = cfg.resolve(&tr.file);
                    let (dt, trace) = read_trace(&path)?;
                    let threshold = tr.threshold.unwrap_or_else(|| {
                        let (lo, hi) = trace.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
                        (lo + hi) / 2.0
                    });
                    let rate =
                        rate_from_trace(&trace, dt, threshold).map_err(|e| ConfigError::from_core(&format!("fit.traces[{k}]"), e))?;
                    samples.push((tr.bias, rate));
                }
                if samples.is_empty() {
                    return Err(ConfigError::invalid("fit", "give a rate_table or traces"));
                }
                if !(f.phi0 > 0.0) || !f.phi0.is_finite() {
                    return Err(ConfigError::invalid("fit.phi0_Hz", "must be finite and > 0"));
                }
                Plan::Fit(FitPlan { samples, phi0: f.phi0 })
            }
            Command::Basis => {
                let b = &cfg.basis;
                let pop = b.population.build("basis", root.child(purpose::BUILD))?;
                if b.stimuli < pop.len() {
                    return Err(ConfigError::invalid(
                        "basis.stimuli",
                        format!("need at least {} stimuli for {} junctions", pop.len(), pop.len()),
                    ));
                }
                let (lo, hi) = pop.range();
                let stimuli = linspace(lo, hi, b.stimuli);
                let (targets, curve_t) = match b.target {
                    BasisTarget::Barometric => {
                        let h = stimuli
                            .iter()
                            .map(|&s| barometric_target(s))
                            .collect::<spinpop_core::Result<Vec<_>>>()
                            .map_err(|e| ConfigError::from_core("basis.target", e))?;
                        (vec![("height", h)], None)
                    }
                    BasisTarget::Trajectory => {
                        let Some(p) = &b.trajectory_file else {
                            return Err(ConfigError::invalid("basis.trajectory_file", "required for trajectory targets"));
                        };
                        let traj = read_trajectory(&cfg.resolve(p))?;
                        let (ts, xs, ys) =
                            sample_trajectory(&traj, &stimuli, (lo, hi)).map_err(|e| ConfigError::from_core("basis.trajectory_file", e))?;
                        (vec![("x", xs), ("y", ys)], Some(ts))
                    }
                };
                let rate_mode = match mode {
                    Mode::Analytic => RateMode::Analytic,
                    Mode::Mc => {
                        let dt = b.dt.unwrap_or_else(|| 0.05 / fastest_rate(pop.params()));
                        if b.steps == 0 || !(dt > 0.0) || !dt.is_finite() {
                            return Err(ConfigError::invalid("basis.steps", "Monte Carlo windows need steps >= 1 and dt_s > 0"));
                        }
                        RateMode::MonteCarlo { steps: b.steps, dt }
                    }
                };
                Plan::Basis(BasisPlan { pop, stimuli, targets, curve_t, normalize: b.normalize, rate_mode })
            }
            Command::Learn => Plan::Learn(learn_plan(cfg, mode)?),
            Command::Sweep => {
                let s = &cfg.sweep;
                s.validate()?;
                let learn = learn_plan(cfg, mode)?;
                if learn.task == Task::Series {
                    return Err(ConfigError::invalid("learn.transform", "sweeps need a single-stage transform"));
                }
                let energy = cfg.energy.config()?;
                // every sweep point must be a valid population before anything runs
                for &v in &s.values {
                    if let Some(var) = swept_variability(s.kind, learn.variability, v) {
                        var.validate().map_err(|e| ConfigError::from_core("sweep.values", e))?;
                    }
                }
                Plan::Sweep(SweepPlan {
                    learn,
                    kind: s.kind,
                    values: s.values.clone(),
                    windows: s.windows_steps.clone(),
                    repeats: s.repeats,
                    relearn_steps: s.relearn_steps,
                    energy,
                })
            }
            Command::Datapath => {
                let d = &cfg.datapath;
                d.validate(cfg)?;
                Plan::Datapath(DatapathPlan {
                    transform: d.transform()?,
                    n_in: d.n_in,
                    n_out: d.n_out,
                    steps: d.steps,
                    variability: d.variability.spec("datapath")?,
                    cfg: d.datapath_config()?,
                    costs: d.cost_config(cfg)?,
                    float_reference: d.float_reference,
                })
            }
        })
    }
}

fn learn_plan(cfg: &ExperimentConfig, mode: Mode) -> Result<LearnPlan, ConfigError> {
    let l = &cfg.learn;
    l.validate(mode)?;
    Ok(LearnPlan {
        task: l.task()?,
        n_in: l.n_in,
        n_out: l.n_out,
        variability: l.variability.spec("learn")?,
        cfg: l.learn_config(mode)?,
        sizes: l.sizes.clone(),
        repeats: l.repeats,
        layout: l.layout()?,
        chain_training: l.chain.training.into(),
    })
}

/// Trajectory coordinates at the curve parameter each stimulus maps to.
fn sample_trajectory(traj: &Trajectory, stimuli: &[f64], range: (f64, f64)) -> spinpop_core::Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (fx, fy) = traj.targets();
    let (t0, t1) = (traj.t[0], traj.t[traj.t.len() - 1]);
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for &s in stimuli {
        let t = (t0 + (s - range.0) / (range.1 - range.0) * (t1 - t0)).clamp(t0, t1);
        out.0.push(t);
        out.1.push(fx.eval(t)?);
        out.2.push(fy.eval(t)?);
    }
    Ok(out)
}

fn json_bytes(v: &serde_json::Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("json serializes");
    b.push(b'\n');
    b
}

fn rates(p: RatesPlan, mode: Mode, root: StreamKey, out: &mut RunWriter) -> Result<()> {
    let params = p.pop.params().to_vec();
    let junctions: Vec<Vec<f64>> = params.iter().enumerate().map(|(j, q)| vec![j as f64, q.delta, q.v_c, q.v0, q.natural_rate()]).collect();
    out.write("junctions.csv", &csv_table(&["junction", "delta", "v_c", "v0", "r0_Hz"], &junctions))?;
    let mc = mode == Mode::Mc;
    let mut rows = Vec::with_capacity(params.len() * p.grid.len());
    for (j, q) in params.iter().enumerate() {
        for (k, &bias) in p.grid.iter().enumerate() {
            let v = bias - q.v0;
            let r = analytic_rate(q, v);
            let mut row = vec![j as f64, bias, r, r / q.natural_rate()];
            if mc {
                let e = escape_rates(q, v);
                // resolve the faster of the two dwell times
                let dt = p.dt.unwrap_or(0.05 / e.parallel.max(e.antiparallel));
                let (rate, sigma) = stepped_rate(q, v, dt, p.steps, root.child(purpose::NOISE).child(j as u64).child(k as u64));
                row.extend([rate, sigma, dt]);
            }
            rows.push(row);
        }
    }
    let header: &[&str] = if mc {
        &["junction", "bias", "analytic_Hz", "normalized", "mc_Hz", "mc_sigma_Hz", "dt_s"]
    } else {
        &["junction", "bias", "analytic_Hz", "normalized"]
    };
    out.write("rates.csv", &csv_table(header, &rows))
}

/// Cycle rate and its Poisson error from stepping one junction `steps` times.
fn stepped_rate(q: &spinpop_core::device::JunctionParams, v: f64, dt: f64, steps: usize, key: StreamKey) -> (f64, f64) {
    let stepper = Stepper::new(q, v, dt);
    let mut rng = key.rng();
    let mut state = JunctionState::new(Orientation::Parallel);
    let mut transitions = 0u64;
    for _ in 0..steps {
        let (next, switched) = stepper.advance(state, &mut rng);
        state = next;
        transitions += switched as u64;
    }
    let duration = steps as f64 * dt;
    (transitions as f64 / 2.0 / duration, (transitions as f64).sqrt() / 2.0 / duration)
}

fn fit(p: FitPlan, out: &mut RunWriter) -> Result<()> {
    let report = fit_params(&p.samples, p.phi0)?;
    let q = report.params;
    let rows: Vec<Vec<f64>> = p.samples.iter().map(|&(b, r)| vec![b, r, analytic_rate(&q, b - q.v0)]).collect();
    out.write("fit_curve.csv", &csv_table(&["bias", "measured_Hz", "fitted_Hz"], &rows))?;
    let summary = json!({
        "delta": q.delta,
        "v_c": q.v_c,
        "v0": q.v0,
        "phi0_Hz": q.phi0,
        "r0_Hz": q.natural_rate(),
        "log_rms": report.log_rms,
        "samples": p.samples.len(),
    });
    out.write("fit.json", &json_bytes(&summary))
}

fn basis(p: BasisPlan, mode: Mode, root: StreamKey, out: &mut RunWriter) -> Result<()> {
    let mut pop = p.pop;
    let raw = measure_basis(&mut pop, &p.stimuli, p.rate_mode, root.child(purpose::BASIS))?;
    let r0: Vec<f64> = pop.params().iter().map(|q| q.natural_rate()).collect();
    let matrix: BasisMatrix = if p.normalize { raw.normalized(&r0)? } else { raw };
    let mut weight_cols = Vec::new();
    let mut recon_cols = Vec::new();
    let mut summary = serde_json::Map::new();
    for (name, target) in &p.targets {
        let fitted = fit_curve(&matrix, target)?;
        summary.insert((*name).to_string(), json!({ "relative_rms": fitted.fit.relative_rms, "residual_norm": fitted.fit.residual_norm }));
        weight_cols.push(fitted.fit.weights);
        recon_cols.push(fitted.reconstruction);
    }
    let weights: Vec<Vec<f64>> =
        (0..pop.len()).map(|j| std::iter::once(j as f64).chain(weight_cols.iter().map(|c| c[j])).collect()).collect();
    let mut w_header = vec!["junction"];
    w_header.extend(p.targets.iter().map(|(n, _)| match *n {
        "x" => "weight_x",
        "y" => "weight_y",
        _ => "weight",
    }));
    out.write("weights.csv", &csv_table(&w_header, &weights))?;

    let rows: Vec<Vec<f64>> = (0..p.stimuli.len())
        .map(|k| match &p.curve_t {
            Some(ts) => vec![ts[k], p.targets[0].1[k], recon_cols[0][k], p.targets[1].1[k], recon_cols[1][k]],
            None => {
                let (t, r) = (p.targets[0].1[k], recon_cols[0][k]);
                vec![p.stimuli[k], t, r, r - t]
            }
        })
        .collect();
    let header: &[&str] = if p.curve_t.is_some() {
        &["t", "x_target", "x_recon", "y_target", "y_recon"]
    } else {
        &["stimulus", "target", "reconstruction", "residual"]
    };
    out.write("reconstruction.csv", &csv_table(header, &rows))?;

    let basis_rows: Vec<Vec<f64>> =
        (0..matrix.rows()).map(|k| std::iter::once(matrix.stimuli()[k]).chain(matrix.row(k).iter().copied()).collect()).collect();
    let names: Vec<String> = std::iter::once("stimulus".to_string()).chain((0..matrix.cols()).map(|j| format!("r{j}"))).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    out.write("basis.csv", &csv_table(&names, &basis_rows))?;

    summary.insert("mode".into(), json!(if mode == Mode::Mc { "mc" } else { "analytic" }));
    summary.insert("normalized".into(), json!(p.normalize));
    out.write("summary.json", &json_bytes(&serde_json::Value::Object(summary)))
}

fn curve_rows(curve: &LearningCurve) -> Vec<Vec<f64>> {
    curve.points.iter().map(|p| vec![p.step as f64, p.mean, p.std]).collect()
}

const CURVE_HEADER: [&str; 3] = ["step", "mean_error_pct", "std_error_pct"];

fn settle(curve: &LearningCurve) -> Option<usize> {
    let tail = (curve.points.len() / 4).max(1);
    curve.steps_to_asymptote(SETTLE_TOLERANCE, SETTLE_SMOOTHING, tail)
}

fn curve_summary(curve: &LearningCurve) -> serde_json::Value {
    let last = curve.last().copied();
    json!({
        "final_mean_error_pct": last.map(|p| p.mean),
        "final_std_error_pct": last.map(|p| p.std),
        "asymptote_pct": curve.asymptote((curve.points.len() / 4).max(1)),
        "steps_to_asymptote": settle(curve),
    })
}

fn write_weights(system: &TransformSystem, prefix: &str, out: &mut RunWriter) -> Result<()> {
    let ws = system.weights();
    for (k, w) in ws.iter().enumerate() {
        let name = if ws.len() == 1 { format!("{prefix}.txt") } else { format!("{prefix}_{k}.txt") };
        out.write(&name, weights_to_text(w).as_bytes())?;
    }
    Ok(())
}

fn learn(p: LearnPlan, root: StreamKey, out: &mut RunWriter) -> Result<()> {
    if p.task == Task::Series {
        let mut chain =
            Chain::build(&[Transform::Sine, Transform::Square], p.n_in, p.variability, p.cfg, p.layout, root.child(purpose::BUILD))?;
        let curve = chain.train_composed(p.chain_training, p.cfg.steps, root.child(purpose::TRAIN))?;
        out.write("curve.csv", &csv_table(&CURVE_HEADER, &curve_rows(&curve)))?;
        for (k, stage) in chain.stages().iter().enumerate() {
            write_weights(stage, &format!("weights_stage{k}"), out)?;
        }
        let mut summary = curve_summary(&curve);
        summary["task"] = json!("series");
        return out.write("summary.json", &json_bytes(&summary));
    }
    if p.sizes.is_empty() {
        let task = p.spec(p.n_in, p.variability);
        let (curve, system) = run_learning(&task, p.cfg, root)?;
        out.write("curve.csv", &csv_table(&CURVE_HEADER, &curve_rows(&curve)))?;
        write_weights(&system, "weights", out)?;
        let c = system.counters();
        let mut summary = curve_summary(&curve);
        summary["task"] = json!(task.transform.name());
        summary["clamp_events"] = json!(c.clamp_events);
        summary["silent_trials"] = json!(c.silent_trials);
        return out.write("summary.json", &json_bytes(&summary));
    }
    let mut rows = Vec::new();
    for &n in &p.sizes {
        let finals = repeat_finals(p.repeats, |r| {
            let (curve, _) = run_learning(&p.spec(n, p.variability), p.cfg, root.child(n as u64).child(r as u64))?;
            Ok(last_point(&curve))
        })?;
        rows.push(std::iter::once(n as f64).chain(aggregate(&finals)).collect());
    }
    out.write("sizes.csv", &csv_table(&["n_in", "mean_error_pct", "std_error_pct", "seed_spread_pct", "repeats"], &rows))
}

fn last_point(curve: &LearningCurve) -> (f64, f64) {
    curve.last().map_or((f64::NAN, f64::NAN), |p| (p.mean, p.std))
}

fn repeat_finals(repeats: usize, mut f: impl FnMut(usize) -> Result<(f64, f64)>) -> Result<Vec<(f64, f64)>> {
    (0..repeats).map(&mut f).collect()
}

/// Mean error, mean trial spread, spread of the means across seeds, repeats.
fn aggregate(finals: &[(f64, f64)]) -> [f64; 4] {
    let n = finals.len() as f64;
    let mean = finals.iter().map(|f| f.0).sum::<f64>() / n;
    let std = finals.iter().map(|f| f.1).sum::<f64>() / n;
    let spread = if finals.len() > 1 { (finals.iter().map(|f| (f.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    [mean, std, spread, n]
}

fn swept_variability(kind: SweepKind, base: VariabilitySpec, v: f64) -> Option<VariabilitySpec> {
    match kind {
        SweepKind::DeltaSpan => Some(VariabilitySpec { delta_span: v, ..base }),
        SweepKind::VcStd => Some(VariabilitySpec { v_c_std: v * base.v_c_mean, ..base }),
        SweepKind::Energy | SweepKind::Fault => None,
    }
}

fn sweep(p: SweepPlan, root: StreamKey, out: &mut RunWriter) -> Result<()> {
    let l = &p.learn;
    match p.kind {
        SweepKind::DeltaSpan | SweepKind::VcStd => {
            let mut rows = Vec::new();
            for (i, &v) in p.values.iter().enumerate() {
                let var = swept_variability(p.kind, l.variability, v).expect("variability sweep");
                let finals = repeat_finals(p.repeats, |r| {
                    let (curve, _) = run_learning(&l.spec(l.n_in, var), l.cfg, root.child(i as u64).child(r as u64))?;
                    Ok(last_point(&curve))
                })?;
                let sigma = var.delta_span / 2.0;
                let rate_factor = if sigma > 0.0 { sigma.sinh() / sigma } else { 1.0 };
                rows.push(std::iter::once(v).chain(aggregate(&finals)).chain([rate_factor]).collect());
            }
            let first = if p.kind == SweepKind::DeltaSpan { "delta_span" } else { "v_c_std_fraction" };
            out.write(
                "sweep.csv",
                &csv_table(&[first, "mean_error_pct", "std_error_pct", "seed_spread_pct", "repeats", "mean_rate_factor"], &rows),
            )
        }
        SweepKind::Energy => {
            let (_, system) = run_learning(&l.spec(l.n_in, l.variability), l.cfg, root)?;
            let s = precision_energy_sweep(&system, &p.windows, &p.energy, l.cfg.eval_trials, root.child(purpose::EVAL))?;
            let rows: Vec<Vec<f64>> =
                s.points.iter().map(|q| vec![q.window_s, q.energy_j, q.error_pct, q.error_std, q.steps as f64]).collect();
            out.write("sweep.csv", &csv_table(&["window_s", "energy_J", "error_pct", "error_std", "window_steps"], &rows))?;
            let summary = json!({ "power_W": s.power_w, "excluded_windows_steps": s.excluded });
            out.write("summary.json", &json_bytes(&summary))
        }
        SweepKind::Fault => {
            let mut rows = Vec::new();
            let mut curves = Vec::new();
            for r in 0..p.repeats {
                let key = root.child(r as u64);
                let task = l.spec(l.n_in, l.variability);
                let (initial, trained) = run_learning(&task, l.cfg, key)?;
                let (trained_mean, _) = last_point(&initial);
                for (i, &f) in p.values.iter().enumerate() {
                    let k = key.child(purpose::FAULT).child(i as u64);
                    let rec = relearn_after_fault(&trained, f, p.relearn_steps, k)?;
                    // the same loss applied before any training
                    let mut fresh = TransformSystem::build(&task, l.cfg, key)?;
                    fresh.kill(f, k.child(purpose::FAULT))?;
                    let fresh_curve = fresh.learn(l.cfg.steps, k.child(purpose::TRAIN))?;
                    let (rm, rs) = last_point(&rec.curve);
                    let (fm, fs) = last_point(&fresh_curve);
                    let settle_or = |c: &LearningCurve| settle(c).map_or(-1.0, |s| s as f64);
                    rows.push(vec![
                        r as f64,
                        f,
                        trained_mean,
                        rec.after_loss.mean,
                        rec.after_loss.std,
                        rm,
                        rs,
                        fm,
                        fs,
                        settle_or(&initial),
                        settle_or(&rec.curve),
                    ]);
                    curves.extend(rec.curve.points.iter().map(|q| vec![r as f64, f, q.step as f64, q.mean, q.std]));
                }
            }
            out.write(
                "sweep.csv",
                &csv_table(
                    &[
                        "repeat",
                        "loss_fraction",
                        "trained_error_pct",
                        "after_loss_error_pct",
                        "after_loss_std_pct",
                        "recovered_error_pct",
                        "recovered_std_pct",
                        "loss_before_training_error_pct",
                        "loss_before_training_std_pct",
                        "initial_settle_steps",
                        "recovery_settle_steps",
                    ],
                    &rows,
                ),
            )?;
            out.write("recovery_curves.csv", &csv_table(&["repeat", "loss_fraction", "step", "mean_error_pct", "std_error_pct"], &curves))
        }
    }
}

fn datapath(p: DatapathPlan, root: StreamKey, out: &mut RunWriter) -> Result<()> {
    let (run, system) = run_system(p.transform, p.n_in, p.n_out, p.variability, p.cfg, p.costs, p.steps, root)?;
    let float_curve = if p.float_reference {
        // float model with the same junctions, window and learning constants
        let window = p.cfg.window();
        let cfg = LearnConfig {
            alpha: p.cfg.alpha,
            catch_halfwidth: p.cfg.catch_halfwidth,
            steps: p.steps,
            eval_trials: p.cfg.eval_trials,
            eval_every: p.cfg.eval_every,
            mode: RateMode::MonteCarlo { steps: 100, dt: window / 100.0 },
            rate_floor_fraction: p.cfg.rate_floor_fraction,
            inversion: p.cfg.inversion,
            ..LearnConfig::default()
        };
        let task = TaskSpec::new(p.transform, p.n_in, p.n_out, p.variability);
        let (curve, _) = run_learning(&task, cfg, root.child(purpose::NOISE))?;
        Some(curve)
    } else {
        None
    };
    let rows: Vec<Vec<f64>> = run
        .curve
        .points
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut row = vec![q.step as f64, q.mean, q.std];
            if let Some(c) = &float_curve {
                let f = c.points.get(i).map_or((f64::NAN, f64::NAN), |f| (f.mean, f.std));
                row.extend([f.0, f.1]);
            }
            row
        })
        .collect();
    let header: &[&str] = if float_curve.is_some() {
        &["step", "quantized_mean_pct", "quantized_std_pct", "float_mean_pct", "float_std_pct"]
    } else {
        &["step", "quantized_mean_pct", "quantized_std_pct"]
    };
    out.write("curve.csv", &csv_table(header, &rows))?;
    out.write("weights.txt", weights_to_text(&system.weights().to_float(p.cfg.weight_scale)).as_bytes())?;
    out.write("report.txt", report_text(&run, p.cfg.learn).as_bytes())?;
    let mut summary = curve_summary(&run.curve);
    summary["write_bits"] = json!(run.write_bits);
    summary["always_write_bits"] = json!(run.naive_write_bits);
    summary["overflows"] = json!(run.overflows);
    summary["sampling_loss"] = json!(run.sampling_loss);
    summary["fsm_visits"] = json!(run.fsm_visits);
    summary["learning_J_per_op"] = json!(run.learning.total());
    summary["inference_J_per_op"] = json!(run.inference.total());
    summary["area_um2"] = json!(run.learning.total_area());
    if let Some(c) = &float_curve {
        summary["float_final_mean_error_pct"] = json!(c.last().map(|q| q.mean));
    }
    out.write("summary.json", &json_bytes(&summary))
}

fn energy_block(title: &str, r: &EnergyReport, text: &mut String) {
    use std::fmt::Write;
    let _ = writeln!(text, "[{title}]");
    let _ = writeln!(text, "operations = {}", r.operations);
    let _ = writeln!(text, "# J per operation: phase junction cmos mram total");
    for p in Phase::ALL {
        let row = r.energy[p as usize];
        let _ = writeln!(text, "{} {} {} {} {}", p.name(), fmt_f64(row[0]), fmt_f64(row[1]), fmt_f64(row[2]), fmt_f64(r.phase(p)));
    }
    let t = |tech| fmt_f64(r.technology(tech));
    let _ = writeln!(text, "total {} {} {} {}", t(Technology::Junction), t(Technology::Cmos), t(Technology::Mram), fmt_f64(r.total()));
    text.push('\n');
}

/// Structured text report: per-phase and per-technology energy, areas and
/// event totals.
pub fn report_text(run: &DatapathRun, learned: bool) -> String {
    use std::fmt::Write;
    let mut text = String::from("# spinpop datapath report\n\n");
    energy_block(if learned { "learning" } else { "operation" }, &run.learning, &mut text);
    energy_block("inference", &run.inference, &mut text);
    let _ = writeln!(text, "[area]\n# um^2");
    for tech in Technology::ALL {
        let _ = writeln!(text, "{} = {}", tech.name(), fmt_f64(run.learning.area[tech as usize]));
    }
    let _ = writeln!(text, "total = {}\n", fmt_f64(run.learning.total_area()));
    let _ = writeln!(text, "[events]");
    let _ = writeln!(text, "mram_write_bits = {}", run.write_bits);
    let _ = writeln!(text, "always_write_bits = {}", run.naive_write_bits);
    let _ = writeln!(text, "overflows = {}", run.overflows);
    let _ = writeln!(text, "sampling_loss = {}", fmt_f64(run.sampling_loss));
    let visits: Vec<String> = run.fsm_visits.iter().map(u64::to_string).collect();
    let _ = writeln!(text, "fsm_visits = {}", visits.join(" "));
    text
}
