//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Tolerances are pinned below.

use std::path::Path;
use std::process::{Command, Stdio};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use spinpop_core::basis::{barometric_target, measure_basis, solve_weights, BasisMatrix, RateMode};
use spinpop_core::datapath::{
    compute_phase, quantization_bound, run_system, CostConfig, CostLedger, Counter8, DatapathConfig, FixedPoint8, FixedWeights,
};
use spinpop_core::device::{analytic_rate, JunctionParams, JunctionState, Orientation, Stepper};
use spinpop_core::energy::{shift_power, stimulus_power, EnergyConfig};
use spinpop_core::learning::{
    relearn_after_fault, run_learning, Chain, ChainLayout, ChainTraining, LearnConfig, LearningCurve, TaskSpec, Transform, TransformSystem,
    WeightMatrix,
};
use spinpop_core::population::{build_population, linspace, Population, VariabilitySpec};
use spinpop_core::rng::{purpose, StreamKey};

// 1
const NATURAL_RATE_TOL: f64 = 0.01;
// 2
const MC_POINTS: usize = 20;
const MC_STEPS: usize = 200_000;
const MC_DT: f64 = 5e-6;
const MC_SIGMAS: f64 = 3.0;
const MC_MIN_INSIDE: usize = 19;
// 3
const GRIPPER_SEEDS: u64 = 4;
const GRIPPER_MAX_PCT: f64 = 2.5;
// 4
const SIZES: [usize; 4] = [10, 25, 50, 100];
const SIZE_SEEDS: u64 = 4;
// 5
const ZOO_SEEDS: u64 = 4;
const ZOO_MAX_PCT: f64 = 10.0;
// 6
const VC_FRACTIONS: [f64; 4] = [0.0, 0.1, 0.2, 0.3];
const DELTA_SPANS: [f64; 6] = [0.0, 4.0, 9.65, 16.0, 24.0, 26.0];
const SWEEP_SEEDS: u64 = 3;
const RATE_LAW_N: usize = 100_000;
const RATE_LAW_TOL: f64 = 0.02;
// 7
const FAULT_SEEDS: u64 = 3;
const FAULT_FRACTION: f64 = 0.2;
const SETTLE_TOLERANCE: f64 = 0.1;
const SETTLE_SMOOTHING: usize = 4;
// 8
const POWER_TOL: f64 = 0.05;
// 9: relative RMS of the barometric fit, first computed with the dense oracle
const BAROMETRIC_BASELINE: f64 = 0.15367;
// 10
const DATAPATH_MAX_PCT: f64 = 5.0;
const QUANT_INSTANCES: usize = 500;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0).max(1.0)).sqrt()
}

fn final_error(curve: &LearningCurve) -> (f64, f64) {
    let p = curve.last().expect("curve has points");
    (p.mean, p.std)
}

fn settle(curve: &LearningCurve) -> f64 {
    let tail = (curve.points.len() / 4).max(1);
    curve.steps_to_asymptote(SETTLE_TOLERANCE, SETTLE_SMOOTHING, tail).map_or(f64::NAN, |s| s as f64)
}

fn gripper(n_in: usize, variability: VariabilitySpec) -> TaskSpec {
    TaskSpec::new(Transform::Identity, n_in, 100, variability)
}

fn c1() -> Outcome {
    let slow = JunctionParams::new(13.78, 0.142).unwrap();
    let fast = JunctionParams::new(6.0, 0.1).unwrap();
    let (a, b) = (analytic_rate(&slow, 0.0), analytic_rate(&fast, 0.0));
    let ok = (a / 518.0 - 1.0).abs() < NATURAL_RATE_TOL && (b / 1.23e6 - 1.0).abs() < NATURAL_RATE_TOL;
    outcome(ok, format!("r0 = {a:.1} Hz and {:.4} MHz", b / 1e6))
}

fn c2() -> Outcome {
    let q = JunctionParams::new(13.78, 0.142).unwrap();
    let half = 2.0 * q.v_c / q.delta;
    let duration = MC_STEPS as f64 * MC_DT;
    let mut inside = 0;
    let mut worst: f64 = 0.0;
    for (k, v) in linspace(-half, half, MC_POINTS).into_iter().enumerate() {
        let stepper = Stepper::new(&q, v, MC_DT);
        let mut rng = StreamKey::new(2).child(k as u64).rng();
        let mut state = JunctionState::new(Orientation::Parallel);
        let mut transitions = 0u64;
        for _ in 0..MC_STEPS {
            let (next, switched) = stepper.advance(state, &mut rng);
            state = next;
            transitions += switched as u64;
        }
        let measured = transitions as f64 / 2.0 / duration;
        let expected = analytic_rate(&q, v);
        // Poisson bound on the expected number of transitions
        let sigma = (2.0 * expected * duration).sqrt() / 2.0 / duration;
        let z = (measured - expected).abs() / sigma;
        worst = worst.max(z);
        inside += (z <= MC_SIGMAS) as usize;
    }
    outcome(inside >= MC_MIN_INSIDE, format!("{inside}/{MC_POINTS} points within {MC_SIGMAS} sigma, worst {worst:.2} sigma"))
}

fn c3() -> Outcome {
    let errors: Vec<f64> = (0..GRIPPER_SEEDS)
        .map(|s| {
            final_error(
                &run_learning(&gripper(100, VariabilitySpec::experimental()), LearnConfig::default(), StreamKey::new(100 + s)).unwrap().0,
            )
            .0
        })
        .collect();
    let m = mean(&errors);
    outcome(m < GRIPPER_MAX_PCT, format!("mean error {m:.2}% over {GRIPPER_SEEDS} seeds (per seed {:.2?})", errors))
}

fn c4() -> Outcome {
    let mut means = Vec::new();
    let mut spreads = Vec::new();
    for &n in &SIZES {
        let errs: Vec<f64> = (0..SIZE_SEEDS)
            .map(|s| {
                final_error(
                    &run_learning(
                        &gripper(n, VariabilitySpec::experimental()),
                        LearnConfig::default(),
                        StreamKey::new(200 + s).child(n as u64),
                    )
                    .unwrap()
                    .0,
                )
                .0
            })
            .collect();
        means.push(mean(&errs));
        spreads.push(std_dev(&errs));
    }
    let ok = (1..SIZES.len()).all(|k| means[k] <= means[k - 1] + spreads[k - 1].max(spreads[k]));
    let table: Vec<String> = SIZES.iter().zip(&means).zip(&spreads).map(|((n, m), s)| format!("{n}: {m:.2}+/-{s:.2}")).collect();
    outcome(ok, format!("error by N_in {}", table.join(", ")))
}

fn c5() -> Outcome {
    let mut rows = Vec::new();
    let mut ok = true;
    for t in [Transform::Double, Transform::Square, Transform::Sine, Transform::PolarToCartesian] {
        let errs: Vec<f64> = (0..ZOO_SEEDS)
            .map(|s| {
                let task = TaskSpec::new(t, 100, 100, VariabilitySpec::experimental());
                final_error(&run_learning(&task, LearnConfig::default(), StreamKey::new(300 + s)).unwrap().0).0
            })
            .collect();
        let m = mean(&errs);
        ok &= m <= ZOO_MAX_PCT;
        rows.push(format!("{} {m:.2}", t.name()));
    }
    let errs: Vec<f64> = (0..ZOO_SEEDS)
        .map(|s| {
            let key = StreamKey::new(350 + s);
            let cfg = LearnConfig::default();
            let mut chain = Chain::build(
                &[Transform::Sine, Transform::Square],
                100,
                VariabilitySpec::experimental(),
                cfg,
                ChainLayout::default(),
                key.child(purpose::BUILD),
            )
            .unwrap();
            final_error(&chain.train_composed(ChainTraining::Joint, cfg.steps, key.child(purpose::TRAIN)).unwrap()).0
        })
        .collect();
    let m = mean(&errs);
    ok &= m <= ZOO_MAX_PCT;
    rows.push(format!("sine-square series {m:.2}"));
    outcome(ok, format!("mean % over {ZOO_SEEDS} seeds: {}", rows.join(", ")))
}

fn sweep_point(var: VariabilitySpec, seed: u64) -> (f64, f64) {
    let errs: Vec<(f64, f64)> = (0..SWEEP_SEEDS)
        .map(|s| final_error(&run_learning(&gripper(100, var), LearnConfig::default(), StreamKey::new(seed).child(s)).unwrap().0))
        .collect();
    (mean(&errs.iter().map(|e| e.0).collect::<Vec<_>>()), mean(&errs.iter().map(|e| e.1).collect::<Vec<_>>()))
}

fn c6() -> Outcome {
    let base = VariabilitySpec::experimental();
    let vc: Vec<(f64, f64)> = VC_FRACTIONS
        .iter()
        .enumerate()
        .map(|(i, &f)| sweep_point(VariabilitySpec { v_c_std: f * base.v_c_mean, ..base }, 400 + i as u64))
        .collect();
    let (e0, s0) = vc[0];
    let flat = vc.iter().all(|&(e, _)| e <= e0 + s0);

    let delta: Vec<f64> =
        DELTA_SPANS.iter().enumerate().map(|(i, &w)| sweep_point(VariabilitySpec { delta_span: w, ..base }, 450 + i as u64).0).collect();
    let (imin, emin) = delta.iter().copied().enumerate().fold((0, f64::INFINITY), |a, (i, e)| if e < a.1 { (i, e) } else { a });
    let dip = imin > 0 && imin < delta.len() - 1 && delta[0] > emin && delta[delta.len() - 1] > emin;

    let sigma = base.delta_span / 2.0;
    let pop = build_population(RATE_LAW_N, (-0.15, 0.15), &base, StreamKey::new(470)).unwrap();
    let r0_center = JunctionParams::new(base.delta_center, base.v_c_mean).unwrap().natural_rate();
    let measured = pop.params().iter().map(|q| q.natural_rate()).sum::<f64>() / RATE_LAW_N as f64 / r0_center;
    let law = sigma.sinh() / sigma;
    let law_ok = (measured / law - 1.0).abs() < RATE_LAW_TOL;

    let vc_txt: Vec<String> = vc.iter().map(|e| format!("{:.2}", e.0)).collect();
    let d_txt: Vec<String> = delta.iter().map(|e| format!("{e:.2}")).collect();
    outcome(
        flat && dip && law_ok,
        format!(
            "V_c sweep [{}] vs {e0:.2}+/-{s0:.2}; delta sweep [{}] min at span {}; mean rate factor {measured:.3} vs {law:.3}",
            vc_txt.join(", "),
            d_txt.join(", "),
            DELTA_SPANS[imin]
        ),
    )
}

fn c7() -> Outcome {
    let cfg = LearnConfig { eval_every: 25, ..LearnConfig::default() };
    let task = gripper(100, VariabilitySpec::experimental());
    let (mut rec, mut fresh, mut bars, mut init_settle, mut rec_settle) = (vec![], vec![], vec![], vec![], vec![]);
    for s in 0..FAULT_SEEDS {
        let key = StreamKey::new(500 + s);
        let (initial, trained) = run_learning(&task, cfg, key).unwrap();
        let k = key.child(purpose::FAULT);
        let r = relearn_after_fault(&trained, FAULT_FRACTION, cfg.steps, k).unwrap();
        let mut f = TransformSystem::build(&task, cfg, key).unwrap();
        f.kill(FAULT_FRACTION, k.child(purpose::FAULT)).unwrap();
        let fc = f.learn(cfg.steps, k.child(purpose::TRAIN)).unwrap();
        let (rm, rs) = final_error(&r.curve);
        let (fm, fs) = final_error(&fc);
        rec.push(rm);
        fresh.push(fm);
        bars.push((rs * rs + fs * fs).sqrt());
        init_settle.push(settle(&initial));
        rec_settle.push(settle(&r.curve));
    }
    let (rm, fm, bar) = (mean(&rec), mean(&fresh), mean(&bars));
    let (is, rs) = (mean(&init_settle), mean(&rec_settle));
    let ok = (rm - fm).abs() <= bar && rs < 0.5 * is;
    outcome(ok, format!("recovered {rm:.2}% vs lost-before-training {fm:.2}% (bar {bar:.2}); settling {rs:.0} vs {is:.0} steps"))
}

fn c8() -> Outcome {
    let area = std::f64::consts::PI * 7.7e-3 * 7.7e-3 / 4.0;
    let cfg = EnergyConfig { ra_product: 424e3 * area, v_stim_max: 0.1, ..EnergyConfig::default() };
    let pop = build_population(100, (-0.1, 0.1), &VariabilitySpec::scaled(), StreamKey::new(8)).unwrap();
    let shift = shift_power(&pop, &cfg);
    let stim = stimulus_power(100, &cfg);
    let close = |x: f64, want: f64| (x / want - 1.0).abs() < POWER_TOL;
    let ok = close(shift, 0.8e-6) && close(stim, 2.4e-6) && close(shift + stim, 3.2e-6);
    outcome(ok, format!("P_shift {:.3} uW, P_stim {:.3} uW, total {:.3} uW", shift * 1e6, stim * 1e6, (shift + stim) * 1e6))
}

fn c9() -> Outcome {
    let deltas = [16.5, 8.87, 18.58, 17.92, 12.95, 18.675, 11.75, 18.35, 12.14];
    let ic = [5e-4, 8.5e-5, 5.5e-4, 3.8e-4, 2.96e-4, 5.35e-4, 3e-4, 3.6e-4, 4.1e-4];
    let mut pop = Population::with_explicit_parameters(&deltas, &ic, (-3e-4, 3e-4), StreamKey::new(9)).unwrap();
    let stimuli = linspace(-3e-4, 3e-4, 50);
    let raw = measure_basis(&mut pop, &stimuli, RateMode::Analytic, StreamKey::new(9)).unwrap();
    let r0: Vec<f64> = pop.params().iter().map(|q| q.natural_rate()).collect();
    let basis: BasisMatrix = raw.normalized(&r0).unwrap();
    let h: Vec<f64> = stimuli.iter().map(|&s| barometric_target(s).unwrap()).collect();
    let ours = solve_weights(&basis, &h).unwrap();

    let a = DMatrix::from_fn(basis.rows(), basis.cols(), |k, i| basis.get(k, i));
    let b = DVector::from_column_slice(&h);
    let w = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
    let oracle = (&a * &w - &b).norm() / (h.len() as f64).sqrt() / (b.norm() / (h.len() as f64).sqrt());
    let ok = ours.relative_rms <= oracle * (1.0 + 1e-6) && ours.relative_rms <= BAROMETRIC_BASELINE;
    outcome(ok, format!("relative RMS {:.5}, dense oracle {oracle:.5}, pinned {BAROMETRIC_BASELINE}", ours.relative_rms))
}

fn c10() -> Outcome {
    let (run, _) = run_system(
        Transform::Identity,
        100,
        100,
        VariabilitySpec::scaled(),
        DatapathConfig::default(),
        CostConfig::default(),
        3000,
        StreamKey::new(10),
    )
    .unwrap();
    let (err, _) = final_error(&run.curve);

    let mut rng = StreamKey::new(1010).rng();
    let mut ledger = CostLedger::new(CostConfig::default()).unwrap();
    let mut within = 0;
    for _ in 0..QUANT_INSTANCES {
        let (n_in, n_out) = (rng.random_range(1..40), rng.random_range(1..8));
        let w: Vec<f64> = (0..n_in * n_out).map(|_| rng.random_range(-0.99..0.99)).collect();
        let counts: Vec<u8> = (0..n_in).map(|_| rng.random()).collect();
        let float = WeightMatrix::from_entries(n_in, n_out, w.clone()).unwrap();
        let (q, _) = FixedWeights::from_float(&float, 1.0, 7).unwrap();
        let counters: Vec<Counter8> = counts
            .iter()
            .map(|&c| {
                let mut k = Counter8::new();
                k.add(c as u32);
                k
            })
            .collect();
        let acc = compute_phase(&counters, &q, &mut ledger).unwrap().acc;
        let bound = quantization_bound(&counters, 7);
        within += (0..n_out).all(|j| {
            let exact: f64 = (0..n_in).map(|i| w[i * n_out + j] * counts[i] as f64).sum();
            (acc[j] as f64 * FixedPoint8::ulp(7) - exact).abs() <= bound + 1e-12
        }) as usize;
    }
    let ok = err <= DATAPATH_MAX_PCT && within == QUANT_INSTANCES && run.write_bits < run.naive_write_bits;
    outcome(
        ok,
        format!(
            "final error {err:.2}%; {within}/{QUANT_INSTANCES} instances within the quantization bound; {} bit writes vs {} always-write",
            run.write_bits, run.naive_write_bits
        ),
    )
}

fn c11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "kind = \"learn\"\nseed = 77\n\n[learn]\nn_in = 40\nn_out = 40\nsteps = 400\neval_every = 100\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_spinpop"))
            .args(["learn", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .stderr(Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    let files = |d: &Path| {
        let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("manifest.json")).unwrap()).unwrap();
        m["files"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap().to_string()).collect::<Vec<_>>()
    };
    let names = files(&a);
    let same = names == files(&b) && names.iter().all(|n| std::fs::read(a.join(n)).unwrap() == std::fs::read(b.join(n)).unwrap());
    outcome(same && !names.is_empty(), format!("{} data files compared byte for byte", names.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("natural rates", c1),
        ("Monte Carlo vs analytic rates", c2),
        ("gripper learning", c3),
        ("population size trend", c4),
        ("transform zoo", c5),
        ("variability robustness", c6),
        ("fault tolerance", c7),
        ("energy formulas", c8),
        ("barometric reconstruction", c9),
        ("datapath equivalence", c10),
        ("determinism", c11),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let started = std::time::Instant::now();
        let o = check();
        failed += !o.pass as usize;
        println!("{} {:>2} {name}: {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, k + 1, o.detail, started.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
