use proptest::prelude::*;
use spinpop_core::basis::{solve_weights, BasisMatrix};
use spinpop_core::datapath::{
    compute_phase, learn_phase, quantization_bound, CostConfig, CostLedger, Counter8, FixedPoint8, FixedWeights, LearnConstants,
};
use spinpop_core::learning::{update_weights, Direction, WeightMatrix};

fn counters(counts: &[u8]) -> Vec<Counter8> {
    counts
        .iter()
        .map(|&n| {
            let mut c = Counter8::new();
            c.add(n as u32);
            c
        })
        .collect()
}

fn ledger() -> CostLedger {
    CostLedger::new(CostConfig::default()).unwrap()
}

fn direction(k: u8) -> Direction {
    [Direction::Increase, Direction::Decrease, Direction::Hold][k as usize % 3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// The fixed-point accumulator stays within the analytic bound of the
    /// same sum taken over unquantized weights.
    #[test]
    fn compute_phase_within_quantization_bound(
        w in prop::collection::vec(-0.99f64..0.99, 24),
        counts in prop::collection::vec(0u8..=255, 6),
    ) {
        let (n_in, n_out, frac) = (6, 4, 7);
        let float = WeightMatrix::from_entries(n_in, n_out, w.clone()).unwrap();
        let (q, saturated) = FixedWeights::from_float(&float, 1.0, frac).unwrap();
        prop_assert_eq!(saturated, 0);
        let c = counters(&counts);
        let out = compute_phase(&c, &q, &mut ledger()).unwrap();
        let ulp = FixedPoint8::ulp(frac);
        let bound = quantization_bound(&c, frac);
        for j in 0..n_out {
            let exact: f64 = (0..n_in).map(|i| w[i * n_out + j] * counts[i] as f64).sum();
            prop_assert!((out.acc[j] as f64 * ulp - exact).abs() <= bound + 1e-12);
        }
    }

    /// Write-skip stores exactly what an always-write array would, and
    /// programs only the bits that differ.
    #[test]
    fn write_skip_matches_always_write(
        raw in prop::collection::vec(any::<i8>(), 20),
        counts in prop::collection::vec(0u8..=255, 5),
        dirs in prop::collection::vec(0u8..3, 4),
        alpha in 1e-4f64..0.1,
    ) {
        let k = LearnConstants::new(alpha, 16.0, 0.25, 7).unwrap();
        let dirs: Vec<Direction> = dirs.into_iter().map(direction).collect();
        let mut w = FixedWeights::from_raw(5, 4, 7, raw.clone()).unwrap();
        let before = w.raw().to_vec();
        let stats = learn_phase(&counters(&counts), &dirs, &mut w, &k, &mut ledger()).unwrap();
        let mut always = before.clone();
        let mut flipped = 0u64;
        let mut written = 0u64;
        for (i, &count) in counts.iter().enumerate() {
            for (j, &d) in dirs.iter().enumerate() {
                if d == Direction::Hold {
                    continue;
                }
                let idx = i * 4 + j;
                let (new, _) = k.update(always[idx], count, d);
                flipped += ((always[idx] as u8) ^ (new as u8)).count_ones() as u64;
                written += 8;
                always[idx] = new;
            }
        }
        prop_assert_eq!(w.raw(), &always[..]);
        prop_assert_eq!(stats.write_bits, flipped);
        prop_assert_eq!(stats.naive_bits, written);
        prop_assert!(stats.write_bits <= stats.naive_bits);
    }

    /// The shrink factor pulls every weight toward zero: with no input the
    /// magnitude strictly decreases, and it never grows beyond the push.
    #[test]
    fn update_contracts_without_input(
        w in prop::collection::vec(-5.0f64..5.0, 12),
        alpha in 1e-4f64..0.5,
        dir in 0u8..2,
    ) {
        let mut m = WeightMatrix::from_entries(3, 4, w.clone()).unwrap();
        update_weights(&mut m, &[0.0; 3], &[direction(dir); 4], alpha, 100.0).unwrap();
        for (new, old) in m.entries().iter().zip(&w) {
            prop_assert!(new.abs() <= old.abs());
            prop_assert!((new.abs() - old.abs() / (1.0 + alpha)).abs() < 1e-12);
        }
    }

    /// Repeating every stimulus leaves the least-squares weights unchanged.
    #[test]
    fn duplicated_rows_keep_the_solution(
        entries in prop::collection::vec(0.05f64..1.0, 40),
        targets in prop::collection::vec(-1.0f64..1.0, 10),
    ) {
        let once = BasisMatrix::from_rows((0..10).map(f64::from).collect(), 4, entries.clone()).unwrap();
        let twice_entries: Vec<f64> = entries.iter().chain(&entries).copied().collect();
        let twice = BasisMatrix::from_rows((0..20).map(f64::from).collect(), 4, twice_entries).unwrap();
        let twice_targets: Vec<f64> = targets.iter().chain(&targets).copied().collect();
        let (Ok(a), Ok(b)) = (solve_weights(&once, &targets), solve_weights(&twice, &twice_targets)) else {
            // a rank-deficient draw must fail the same way both times
            prop_assert_eq!(solve_weights(&once, &targets).is_err(), solve_weights(&twice, &twice_targets).is_err());
            return Ok(());
        };
        for (x, y) in a.weights.iter().zip(&b.weights) {
            prop_assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()));
        }
        prop_assert!((a.relative_rms - b.relative_rms).abs() < 1e-9);
    }
}
