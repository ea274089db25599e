//! Small derivative-free minimizer used by the tuning-curve fit.

use alloc::vec::Vec;

pub(crate) struct NelderMead {
    pub max_iter: usize,
    pub x_tol: f64,
    pub f_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead { max_iter: 20_000, x_tol: 1e-10, f_tol: 1e-14 }
    }
}

impl NelderMead {
    /// Minimize `f` starting from `x0` with initial simplex edge lengths `scale`.
    pub fn minimize<F>(&self, f: F, x0: &[f64], scale: &[f64]) -> (Vec<f64>, f64)
    where
        F: Fn(&[f64]) -> f64,
    {
        let n = x0.len();
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(x0.to_vec());
        for k in 0..n {
            let mut v = x0.to_vec();
            v[k] += scale[k];
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

        for _ in 0..self.max_iter {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let size = simplex[1..].iter().flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| libm::fabs(a - b))).fold(0.0, f64::max);
            if spread <= self.f_tol * (1.0 + libm::fabs(values[0])) && size <= self.x_tol {
                break;
            }

            let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
            let towards = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect() };

            let reflected = towards(-1.0);
            let fr = f(&reflected);
            if fr < values[0] {
                let expanded = towards(-2.0);
                let fe = f(&expanded);
                if fe < fr {
                    simplex[n] = expanded;
                    values[n] = fe;
                } else {
                    simplex[n] = reflected;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = reflected;
                values[n] = fr;
            } else {
                let contracted = if fr < values[n] { towards(-0.5) } else { towards(0.5) };
                let fc = f(&contracted);
                if fc < values[n].min(fr) {
                    simplex[n] = contracted;
                    values[n] = fc;
                } else {
                    let best = simplex[0].clone();
                    for i in 1..=n {
                        for k in 0..n {
                            simplex[i][k] = best[k] + 0.5 * (simplex[i][k] - best[k]);
                        }
                        values[i] = f(&simplex[i]);
                    }
                }
            }
        }

        let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
        (simplex[best].clone(), values[best])
    }
}
