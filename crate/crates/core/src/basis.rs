//! Tuning curves as a basis set for function synthesis.
//!
//! A target `H` sampled at stimuli `s_k` is approximated by `sum_i w_i r_i(s_k)`
//! where `r_i` are the junction rates. The weights are the least-squares
//! solution of `R w = H`, computed through column-equilibrated normal
//! equations.

use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::population::Population;
use crate::rng::StreamKey;

/// How junction rates are obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateMode {
    /// Noise-free tuning curves.
    Analytic,
    /// Transition counting over a simulated window.
    MonteCarlo { steps: usize, dt: f64 },
}

/// Rates indexed by (stimulus `k`, junction `i`), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix {
    stimuli: Vec<f64>,
    cols: usize,
    entries: Vec<f64>,
}

impl BasisMatrix {
    pub fn from_rows(stimuli: Vec<f64>, cols: usize, entries: Vec<f64>) -> Result<Self> {
        check_len(stimuli.len() * cols, entries.len())?;
        if entries.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::InvalidParameter { name: "entries", reason: "rates must be finite and >= 0" });
        }
        Ok(BasisMatrix { stimuli, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.stimuli.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn stimuli(&self) -> &[f64] {
        &self.stimuli
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.entries[k * self.cols..(k + 1) * self.cols]
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.entries[k * self.cols + i]
    }

    /// Same matrix with every entry divided by the natural rate of its junction.
    pub fn normalized(&self, natural_rates: &[f64]) -> Result<BasisMatrix> {
        check_len(self.cols, natural_rates.len())?;
        let entries = self.entries.chunks(self.cols).flat_map(|row| row.iter().zip(natural_rates).map(|(r, r0)| r / r0)).collect();
        BasisMatrix::from_rows(self.stimuli.clone(), self.cols, entries)
    }

    /// `R w` evaluated at every stimulus.
    pub fn apply(&self, weights: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, weights.len())?;
        Ok((0..self.rows()).map(|k| dot(self.row(k), weights)).collect())
    }
}

/// Rates of every junction at every stimulus.
pub fn measure_basis(pop: &mut Population, stimuli: &[f64], mode: RateMode, key: StreamKey) -> Result<BasisMatrix> {
    if stimuli.is_empty() {
        return Err(Error::InvalidParameter { name: "stimuli", reason: "must not be empty" });
    }
    let mut entries = Vec::with_capacity(stimuli.len() * pop.len());
    for (k, &s) in stimuli.iter().enumerate() {
        let rates = match mode {
            RateMode::Analytic => pop.analytic_rates(s),
            RateMode::MonteCarlo { steps, dt } => pop.simulate_window(s, steps, dt, key.child(k as u64)).rates(),
        };
        entries.extend(rates);
    }
    BasisMatrix::from_rows(stimuli.to_vec(), pop.len(), entries)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquares {
    pub weights: Vec<f64>,
    /// `||R w - H||_2`.
    pub residual_norm: f64,
    /// RMS residual divided by the RMS of the targets.
    pub relative_rms: f64,
}

/// Equilibrated pivots below this flag a column as dependent on earlier ones
/// (its contribution to the condition number exceeds 1e10).
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Least-squares weights minimizing `||R w - H||_2`.
pub fn solve_weights(basis: &BasisMatrix, targets: &[f64]) -> Result<LeastSquares> {
    let (m, n) = (basis.rows(), basis.cols());
    check_len(m, targets.len())?;
    if m < n {
        return Err(Error::DimensionMismatch { expected: n, found: m });
    }

    let scale: Vec<f64> = (0..n).map(|i| libm::sqrt((0..m).map(|k| basis.get(k, i) * basis.get(k, i)).sum::<f64>())).collect();
    let zero: Vec<usize> = scale.iter().enumerate().filter(|(_, &s)| !(s > 0.0)).map(|(i, _)| i).collect();
    if !zero.is_empty() {
        return Err(Error::RankDeficient { columns: zero });
    }
    let a = |k: usize, i: usize| basis.get(k, i) / scale[i];

    let mut gram = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let g: f64 = (0..m).map(|k| a(k, i) * a(k, j)).sum();
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let chol = cholesky(&gram, n)?;

    let project = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..m).map(|k| a(k, i) * v[k]).sum()).collect() };
    let mut z = chol_solve(&chol, n, &project(targets));
    // one step of iterative refinement
    let resid: Vec<f64> = (0..m).map(|k| targets[k] - (0..n).map(|i| a(k, i) * z[i]).sum::<f64>()).collect();
    let dz = chol_solve(&chol, n, &project(&resid));
    for (zi, d) in z.iter_mut().zip(dz) {
        *zi += d;
    }

    let weights: Vec<f64> = z.iter().zip(&scale).map(|(zi, s)| zi / s).collect();
    let fitted = basis.apply(&weights)?;
    let sq: f64 = fitted.iter().zip(targets).map(|(f, t)| (f - t) * (f - t)).sum();
    let target_sq: f64 = targets.iter().map(|t| t * t).sum();
    let residual_norm = libm::sqrt(sq);
    let relative_rms = if target_sq > 0.0 { libm::sqrt(sq / target_sq) } else { residual_norm };
    Ok(LeastSquares { weights, residual_norm, relative_rms })
}

fn cholesky(g: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = alloc::vec![0.0; n * n];
    let mut dependent = Vec::new();
    for j in 0..n {
        let mut d = g[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > RANK_TOLERANCE * g[j * n + j]) {
            dependent.push(j);
            // keep factoring so every dependent column gets reported
            l[j * n + j] = 1.0;
            continue;
        }
        let djj = libm::sqrt(d);
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = g[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    if dependent.is_empty() {
        Ok(l)
    } else {
        Err(Error::RankDeficient { columns: dependent })
    }
}

fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = alloc::vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = alloc::vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Weighted sum of rates, `sum_i w_i r_i`.
pub fn reconstruct(weights: &[f64], rates: &[f64]) -> Result<f64> {
    check_len(weights.len(), rates.len())?;
    Ok(dot(weights, rates))
}

const BAROMETRIC_ALPHA: f64 = 5.255;

/// Barometric height target as a function of the bias current `i` in amperes.
pub fn barometric_target(i: f64) -> Result<f64> {
    let base = (i + 4.2e-4) / 0.1;
    if !(base >= 0.0) {
        return Err(Error::OutsideDomain("barometric formula needs i >= -4.2e-4 A"));
    }
    Ok(1.0 + 0.3 * (1.0 - libm::pow(base, 1.0 / BAROMETRIC_ALPHA)))
}

/// Target function for basis synthesis.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetFunction {
    Barometric,
    /// Piecewise-linear through `(input, output)` samples.
    Sampled {
        inputs: Vec<f64>,
        outputs: Vec<f64>,
    },
}

impl TargetFunction {
    pub fn sampled(inputs: Vec<f64>, outputs: Vec<f64>) -> Result<Self> {
        check_len(inputs.len(), outputs.len())?;
        if inputs.len() < 2 {
            return Err(Error::InvalidParameter { name: "inputs", reason: "need at least 2 samples" });
        }
        if inputs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter { name: "inputs", reason: "must be strictly increasing" });
        }
        Ok(TargetFunction::Sampled { inputs, outputs })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            TargetFunction::Barometric => barometric_target(x),
            TargetFunction::Sampled { inputs, outputs } => {
                let n = inputs.len();
                if !(x >= inputs[0] && x <= inputs[n - 1]) {
                    return Err(Error::OutsideDomain("outside sampled target range"));
                }
                let k = inputs.partition_point(|&v| v <= x).clamp(1, n - 1);
                let (x0, x1) = (inputs[k - 1], inputs[k]);
                let t = (x - x0) / (x1 - x0);
                Ok(outputs[k - 1] + t * (outputs[k] - outputs[k - 1]))
            }
        }
    }
}

/// A parametric planar curve `(x(t), y(t))`, e.g. a handwritten letter.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Trajectory {
    pub fn new(t: Vec<f64>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        check_len(t.len(), x.len())?;
        check_len(t.len(), y.len())?;
        // validation through the sampled constructor
        TargetFunction::sampled(t.clone(), x.clone())?;
        Ok(Trajectory { t, x, y })
    }

    pub fn targets(&self) -> (TargetFunction, TargetFunction) {
        (
            TargetFunction::Sampled { inputs: self.t.clone(), outputs: self.x.clone() },
            TargetFunction::Sampled { inputs: self.t.clone(), outputs: self.y.clone() },
        )
    }

    /// Map the curve parameter linearly onto `range`.
    pub fn stimulus_for(&self, t: f64, range: (f64, f64)) -> f64 {
        let (t0, t1) = (self.t[0], self.t[self.t.len() - 1]);
        range.0 + (t - t0) / (t1 - t0) * (range.1 - range.0)
    }
}

/// Fitted reconstruction of one coordinate of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveFit {
    pub stimuli: Vec<f64>,
    pub target: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub fit: LeastSquares,
}

/// Fit `target` sampled on `stimuli` with the junction basis.
pub fn fit_curve(basis: &BasisMatrix, target: &[f64]) -> Result<CurveFit> {
    let fit = solve_weights(basis, target)?;
    let reconstruction = basis.apply(&fit.weights)?;
    Ok(CurveFit { stimuli: basis.stimuli().to_vec(), target: target.to_vec(), reconstruction, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{build_population, VariabilitySpec};
    use approx::assert_relative_eq;

    fn small_basis() -> BasisMatrix {
        BasisMatrix::from_rows(alloc::vec![0.0, 1.0, 2.0], 3, alloc::vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]).unwrap()
    }

    #[test]
    fn square_system_is_solved_exactly() {
        let r = small_basis();
        let h = [1.0, -2.0, 5.0];
        let ls = solve_weights(&r, &h).unwrap();
        let back = r.apply(&ls.weights).unwrap();
        for (b, t) in back.iter().zip(&h) {
            assert_relative_eq!(b, t, max_relative = 1e-12);
        }
        assert!(ls.relative_rms < 1e-9);
    }

    #[test]
    fn column_target_gives_unit_vector() {
        let r = small_basis();
        let col: Vec<f64> = (0..3).map(|k| r.get(k, 1)).collect();
        let w = solve_weights(&r, &col).unwrap().weights;
        assert_relative_eq!(w[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(w[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(w[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dependent_columns_are_named() {
        let r = BasisMatrix::from_rows(alloc::vec![0.0, 1.0, 2.0], 3, alloc::vec![1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 3.0, 6.0, 0.0]).unwrap();
        assert_eq!(solve_weights(&r, &[1.0, 1.0, 1.0]), Err(Error::RankDeficient { columns: alloc::vec![2] }));
        let r = BasisMatrix::from_rows(alloc::vec![0.0, 1.0, 2.0], 3, alloc::vec![1.0, 2.0, 1.0, 2.0, 4.0, 0.0, 3.0, 6.0, 5.0]).unwrap();
        assert_eq!(solve_weights(&r, &[1.0, 1.0, 1.0]), Err(Error::RankDeficient { columns: alloc::vec![1] }));
        let wide = BasisMatrix::from_rows(alloc::vec![0.0], 2, alloc::vec![1.0, 1.0]).unwrap();
        assert!(solve_weights(&wide, &[1.0]).is_err());
    }

    #[test]
    fn reconstruct_examples() {
        assert_eq!(reconstruct(&[0.0; 3], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(reconstruct(&[0.0, 1.0, 0.0], &[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert!(reconstruct(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn barometric_examples() {
        assert_relative_eq!(barometric_target(-4.2e-4).unwrap(), 1.3);
        assert_relative_eq!(barometric_target(0.1 - 4.2e-4).unwrap(), 1.0, max_relative = 1e-12);
        let expect = 1.0 + 0.3 * (1.0 - 0.0042f64.powf(1.0 / 5.255));
        assert_relative_eq!(barometric_target(0.0).unwrap(), expect, max_relative = 1e-12);
        assert_relative_eq!(expect, 1.194114, max_relative = 1e-6);
        assert!(matches!(barometric_target(-1e-3), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn analytic_basis_matches_pointwise_rates() {
        let mut pop = build_population(4, (-0.1, 0.1), &VariabilitySpec::scaled(), StreamKey::new(2)).unwrap();
        let stimuli = [-0.1, -0.02, 0.05];
        let r = measure_basis(&mut pop, &stimuli, RateMode::Analytic, StreamKey::new(3)).unwrap();
        for (k, &s) in stimuli.iter().enumerate() {
            for (i, p) in pop.params().iter().enumerate() {
                assert_eq!(r.get(k, i), crate::device::analytic_rate(p, s - p.v0));
            }
        }
        // at its own bias a junction reports its natural rate
        assert_relative_eq!(r.get(0, 0), pop.params()[0].natural_rate());
        assert!(measure_basis(&mut pop, &[], RateMode::Analytic, StreamKey::new(3)).is_err());
    }

    #[test]
    fn sampled_target_interpolates() {
        let f = TargetFunction::sampled(alloc::vec![0.0, 1.0, 3.0], alloc::vec![0.0, 2.0, 0.0]).unwrap();
        assert_relative_eq!(f.eval(0.5).unwrap(), 1.0);
        assert_relative_eq!(f.eval(2.0).unwrap(), 1.0);
        assert_relative_eq!(f.eval(3.0).unwrap(), 0.0);
        assert!(f.eval(3.5).is_err());
        assert!(TargetFunction::sampled(alloc::vec![0.0, 0.0], alloc::vec![1.0, 1.0]).is_err());
    }
}
