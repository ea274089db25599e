//! Independent reference computations for the device, basis and learning
//! models. The oracles here re-derive each quantity from first principles
//! instead of calling back into the crate.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use spinpop_core::basis::{measure_basis, solve_weights, BasisMatrix, RateMode};
use spinpop_core::device::{analytic_rate, escape_rates, JunctionParams, JunctionState, Orientation, Stepper};
use spinpop_core::learning::{update_weights, Direction, WeightMatrix};
use spinpop_core::population::Population;
use spinpop_core::rng::StreamKey;

fn cycle_rate_oracle(delta: f64, v_c: f64, phi0: f64, v: f64) -> f64 {
    let p = phi0 * (-delta * (1.0 + v / v_c)).exp();
    let ap = phi0 * (-delta * (1.0 - v / v_c)).exp();
    p * ap / (p + ap)
}

#[test]
fn cycle_rate_matches_two_state_kinetics() {
    for &(delta, v_c) in &[(13.78, 0.142), (6.0, 0.1), (18.675, 5.35e-4)] {
        let q = JunctionParams::new(delta, v_c).unwrap();
        for k in -20..=20 {
            let v = k as f64 * v_c / 10.0;
            assert_relative_eq!(analytic_rate(&q, v), cycle_rate_oracle(delta, v_c, 1e9, v), max_relative = 1e-12);
        }
    }
}

#[test]
fn dwell_times_are_exponential_with_the_escape_rate() {
    let q = JunctionParams::new(6.0, 0.1).unwrap();
    let v = 0.02;
    let phi = escape_rates(&q, v);
    let dt = 0.01 / phi.parallel.max(phi.antiparallel);
    let stepper = Stepper::new(&q, v, dt);
    let mut rng = StreamKey::new(7).rng();
    let mut state = JunctionState::new(Orientation::Parallel);
    let (mut dwell, mut sums, mut counts) = (0usize, [0.0f64; 2], [0usize; 2]);
    while counts[0].min(counts[1]) < 4000 {
        let from = state.orientation;
        let (next, switched) = stepper.advance(state, &mut rng);
        dwell += 1;
        if switched {
            let s = (from == Orientation::AntiParallel) as usize;
            sums[s] += dwell as f64 * dt;
            counts[s] += 1;
            dwell = 0;
        }
        state = next;
    }
    // mean dwell 1/phi with a relative standard error of 1/sqrt(n); the
    // discretization adds about dt*phi/2
    for (s, rate) in [phi.parallel, phi.antiparallel].into_iter().enumerate() {
        let mean = sums[s] / counts[s] as f64;
        let rel = (mean * rate - 1.0).abs();
        assert!(rel < 4.0 / (counts[s] as f64).sqrt() + 0.01, "state {s}: mean dwell {mean}, expected {}", 1.0 / rate);
    }
}

#[test]
fn natural_rates_of_the_two_device_families() {
    let big = JunctionParams::new(13.78, 0.142).unwrap();
    let small = JunctionParams::new(6.0, 0.1).unwrap();
    assert_relative_eq!(big.natural_rate(), 1e9 * (-13.78f64).exp() / 2.0, max_relative = 1e-12);
    assert_relative_eq!(small.natural_rate(), 1e9 * (-6.0f64).exp() / 2.0, max_relative = 1e-12);
}

fn nalgebra_lstsq(basis: &BasisMatrix, targets: &[f64]) -> Vec<f64> {
    let a = DMatrix::from_fn(basis.rows(), basis.cols(), |k, i| basis.get(k, i));
    let b = DVector::from_column_slice(targets);
    a.svd(true, true).solve(&b, 1e-14).unwrap().iter().copied().collect()
}

#[test]
fn least_squares_agrees_with_dense_svd() {
    let mut rng = StreamKey::new(3).rng();
    for trial in 0..20 {
        let (m, n) = (30 + trial, 3 + trial % 7);
        let entries: Vec<f64> = (0..m * n).map(|_| rng.random_range(0.0..1.0)).collect();
        let stimuli = (0..m).map(|k| k as f64).collect();
        let basis = BasisMatrix::from_rows(stimuli, n, entries).unwrap();
        let targets: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ours = solve_weights(&basis, &targets).unwrap();
        let oracle = nalgebra_lstsq(&basis, &targets);
        for (a, b) in ours.weights.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn tuning_curve_basis_agrees_with_dense_svd() {
    // ill-conditioned real case: bell curves of nine junctions at 30 biases
    let deltas = [16.5, 8.87, 18.58, 17.92, 12.95, 18.675, 11.75, 18.35, 12.14];
    let ic = [5e-4, 8.5e-5, 5.5e-4, 3.8e-4, 2.96e-4, 5.35e-4, 3e-4, 3.6e-4, 4.1e-4];
    let mut pop = Population::with_explicit_parameters(&deltas, &ic, (-3e-4, 3e-4), StreamKey::new(0)).unwrap();
    let stimuli: Vec<f64> = (0..30).map(|k| -3e-4 + 6e-4 * k as f64 / 29.0).collect();
    let raw = measure_basis(&mut pop, &stimuli, RateMode::Analytic, StreamKey::new(1)).unwrap();
    let r0: Vec<f64> = pop.params().iter().map(|q| q.natural_rate()).collect();
    let basis = raw.normalized(&r0).unwrap();
    let targets: Vec<f64> = stimuli.iter().map(|s| (s / 3e-4).powi(2)).collect();
    let ours = solve_weights(&basis, &targets).unwrap();
    let oracle = nalgebra_lstsq(&basis, &targets);
    let resid = |w: &[f64]| -> f64 {
        (0..basis.rows()).map(|k| (basis.row(k).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - targets[k]).powi(2)).sum::<f64>().sqrt()
    };
    assert!(resid(&ours.weights) <= resid(&oracle) * (1.0 + 1e-6) + 1e-12);
    assert_relative_eq!(ours.residual_norm, resid(&ours.weights), max_relative = 1e-9);
}

#[test]
fn weight_update_matches_the_rule_entrywise() {
    let mut rng = StreamKey::new(9).rng();
    let (n_in, n_out, alpha, f0) = (7, 5, 0.01, 250.0);
    let start: Vec<f64> = (0..n_in * n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rates: Vec<f64> = (0..n_in).map(|_| rng.random_range(0.0..500.0)).collect();
    let dirs = [Direction::Increase, Direction::Hold, Direction::Decrease, Direction::Increase, Direction::Hold];
    let mut w = WeightMatrix::from_entries(n_in, n_out, start.clone()).unwrap();
    update_weights(&mut w, &rates, &dirs, alpha, f0).unwrap();
    for i in 0..n_in {
        for j in 0..n_out {
            let old = start[i * n_out + j];
            let expected = match dirs[j] {
                Direction::Increase => (old + alpha * rates[i] / f0) / (1.0 + alpha),
                Direction::Decrease => (old - alpha * rates[i] / f0) / (1.0 + alpha),
                Direction::Hold => old,
            };
            assert_relative_eq!(w.get(i, j), expected, max_relative = 1e-14);
        }
    }
}
