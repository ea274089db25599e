//! Physics of a single superparamagnetic tunnel junction.
//!
//! The junction is a two-state Poisson process. A bias `v_eff` (in units of
//! the critical voltage `v_c`) tilts the barrier seen from each state:
//!
//! ```text
//! phi_P  = phi0 * exp(-delta * (1 + v_eff / v_c))
//! phi_AP = phi0 * exp(-delta * (1 - v_eff / v_c))
//! ```
//!
//! The full-cycle rate is `phi_P * phi_AP / (phi_P + phi_AP)`, which reduces to
//! `r0 / cosh(delta * v_eff / v_c)` with the natural rate
//! `r0 = phi0 * exp(-delta) / 2`.
//!
//! Positive `v_eff` therefore stabilizes the parallel state and negative
//! `v_eff` the antiparallel one. Rates are in Hz, biases in volts, times in
//! seconds.

use alloc::vec::Vec;
use rand::Rng;

use crate::error::{check_positive, Error, Result};
use crate::optim::NelderMead;

/// Attempt frequency used when none is given.
pub const DEFAULT_ATTEMPT_FREQUENCY_HZ: f64 = 1.0e9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JunctionParams {
    /// Barrier height in units of the thermal energy.
    pub delta: f64,
    /// Critical bias. Volts when the junction is voltage driven.
    pub v_c: f64,
    /// Attempt frequency, Hz.
    pub phi0: f64,
    /// Bias the junction is tuned to.
    pub v0: f64,
    /// Device resistance in ohms, only needed for energy accounting.
    pub resistance: Option<f64>,
}

impl JunctionParams {
    pub fn new(delta: f64, v_c: f64) -> Result<Self> {
        let p = JunctionParams { delta, v_c, phi0: DEFAULT_ATTEMPT_FREQUENCY_HZ, v0: 0.0, resistance: None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_bias(mut self, v0: f64) -> Self {
        self.v0 = v0;
        self
    }

    pub fn with_attempt_frequency(mut self, phi0: f64) -> Result<Self> {
        self.phi0 = phi0;
        self.validate()?;
        Ok(self)
    }

    pub fn with_resistance(mut self, ohms: f64) -> Result<Self> {
        check_positive("resistance", ohms)?;
        self.resistance = Some(ohms);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("delta", self.delta)?;
        check_positive("v_c", self.v_c)?;
        check_positive("phi0", self.phi0)?;
        if !self.v0.is_finite() {
            return Err(Error::InvalidParameter { name: "v0", reason: "must be finite" });
        }
        let r0 = self.natural_rate();
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(Error::InvalidParameter { name: "delta", reason: "natural rate must be finite and positive" });
        }
        Ok(())
    }

    /// Peak full-cycle rate `phi0 * exp(-delta) / 2`.
    pub fn natural_rate(&self) -> f64 {
        self.phi0 * libm::exp(-self.delta) / 2.0
    }

    /// Characteristic half-width `v_c / delta` of the tuning curve.
    pub fn width(&self) -> f64 {
        self.v_c / self.delta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Orientation {
    Parallel,
    AntiParallel,
}

impl Orientation {
    pub fn flipped(self) -> Self {
        match self {
            Orientation::Parallel => Orientation::AntiParallel,
            Orientation::AntiParallel => Orientation::Parallel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JunctionState {
    pub orientation: Orientation,
    /// Seconds since the last switch.
    pub elapsed: f64,
}

impl JunctionState {
    pub fn new(orientation: Orientation) -> Self {
        JunctionState { orientation, elapsed: 0.0 }
    }
}

/// Geometry of a junction sitting on a heavy-metal underlayer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SotGeometry {
    /// Junction diameter, m.
    pub d: f64,
    /// Free layer thickness, m.
    pub t_j: f64,
    /// Underlayer thickness, m.
    pub t_u: f64,
    /// Underlayer width, m.
    pub w: f64,
    /// Spin-transfer critical current, A.
    pub i_c: f64,
}

impl SotGeometry {
    pub fn new(d: f64, t_j: f64, t_u: f64, w: f64, i_c: f64) -> Result<Self> {
        check_positive("d", d)?;
        check_positive("t_j", t_j)?;
        check_positive("t_u", t_u)?;
        check_positive("w", w)?;
        check_positive("i_c", i_c)?;
        Ok(SotGeometry { d, t_j, t_u, w, i_c })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EscapeRates {
    pub parallel: f64,
    pub antiparallel: f64,
}

impl EscapeRates {
    pub fn from_state(&self, orientation: Orientation) -> f64 {
        match orientation {
            Orientation::Parallel => self.parallel,
            Orientation::AntiParallel => self.antiparallel,
        }
    }
}

/// Escape rates out of the P and AP states. Underflow yields exactly 0.
pub fn escape_rates(params: &JunctionParams, v_eff: f64) -> EscapeRates {
    let tilt = v_eff / params.v_c;
    EscapeRates {
        parallel: params.phi0 * libm::exp(-params.delta * (1.0 + tilt)),
        antiparallel: params.phi0 * libm::exp(-params.delta * (1.0 - tilt)),
    }
}

/// Probability `1 - exp(-dt * phi)` that a Poisson process with rate `phi`
/// fires at least once in `dt`.
pub fn switch_probability(phi: f64, dt: f64) -> f64 {
    let p = -libm::expm1(-dt * phi);
    p.clamp(0.0, 1.0)
}

/// Advance `state` by one time step of length `dt`.
pub fn step<R: Rng + ?Sized>(state: JunctionState, params: &JunctionParams, v_eff: f64, dt: f64, rng: &mut R) -> JunctionState {
    Stepper::new(params, v_eff, dt).advance(state, rng).0
}

/// Per-state switching probabilities for a fixed bias and time step.
///
/// Window simulations hold the bias constant, so the exponentials are
/// evaluated once and each step costs a single uniform draw.
#[derive(Clone, Copy, Debug)]
pub struct Stepper {
    pub p_parallel: f64,
    pub p_antiparallel: f64,
    pub dt: f64,
}

impl Stepper {
    pub fn new(params: &JunctionParams, v_eff: f64, dt: f64) -> Self {
        let rates = escape_rates(params, v_eff);
        Stepper { p_parallel: switch_probability(rates.parallel, dt), p_antiparallel: switch_probability(rates.antiparallel, dt), dt }
    }

    /// Returns the new state and whether it switched.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(&self, state: JunctionState, rng: &mut R) -> (JunctionState, bool) {
        let p = match state.orientation {
            Orientation::Parallel => self.p_parallel,
            Orientation::AntiParallel => self.p_antiparallel,
        };
        let u: f64 = rng.random();
        if u < p {
            (JunctionState::new(state.orientation.flipped()), true)
        } else {
            (JunctionState { orientation: state.orientation, elapsed: state.elapsed + self.dt }, false)
        }
    }
}

/// Mean full-cycle rate `r0 / cosh(delta * v_eff / v_c)`.
pub fn analytic_rate(params: &JunctionParams, v_eff: f64) -> f64 {
    params.natural_rate() / libm::cosh(params.delta * v_eff / params.v_c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inversion {
    /// Non-negative bias that produces the requested rate.
    pub v_eff: f64,
    /// The request exceeded the natural rate and was clamped to it.
    pub clamped: bool,
}

/// Bias at which the tuning curve reaches `r_target`.
///
/// The tuning curve is even, so only the non-negative branch is returned.
/// Requests above the natural rate are clamped to it.
pub fn invert_rate(params: &JunctionParams, r_target: f64) -> Result<Inversion> {
    if !(r_target > 0.0) || r_target.is_nan() {
        return Err(Error::RateNotRepresentable(r_target));
    }
    let r0 = params.natural_rate();
    if r_target >= r0 {
        return Ok(Inversion { v_eff: 0.0, clamped: r_target > r0 });
    }
    Ok(Inversion { v_eff: params.width() * libm::acosh(r0 / r_target), clamped: false })
}

/// Voltage-equivalent bias added by a spin-orbit torque current `i_sot`
/// flowing in the underlayer.
pub fn sot_effective_shift(geom: &SotGeometry, i_sot: f64, params: &JunctionParams) -> f64 {
    params.v_c * (geom.d * geom.t_j * i_sot) / (geom.w * geom.t_u * geom.i_c)
}

/// Mean rate including an underlayer shift.
pub fn analytic_rate_with_sot(params: &JunctionParams, v_stt: f64, geom: &SotGeometry, i_sot: f64) -> f64 {
    analytic_rate(params, v_stt + sot_effective_shift(geom, i_sot, params))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitReport {
    pub params: JunctionParams,
    /// Root mean square of the natural-log rate residuals.
    pub log_rms: f64,
}

/// Fit barrier, critical bias and center to measured `(bias, rate)` samples.
///
/// The attempt frequency is held at `phi0`. Samples with non-positive rate are
/// ignored. The objective is the squared residual of `ln(rate)`, searched on a
/// coarse grid and refined with Nelder-Mead.
pub fn fit_params(samples: &[(f64, f64)], phi0: f64) -> Result<FitReport> {
    check_positive("phi0", phi0)?;
    let pts: Vec<(f64, f64)> =
        samples.iter().filter(|(x, r)| x.is_finite() && r.is_finite() && *r > 0.0).map(|&(x, r)| (x, libm::log(r))).collect();
    if pts.len() < 3 {
        return Err(Error::Unidentifiable("need at least 3 samples with positive rate"));
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if hi - lo <= 1e-9 * (1.0 + libm::fabs(hi)) {
        return Err(Error::Unidentifiable("all rates are equal"));
    }
    let (x_min, x_max) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let span = x_max - x_min;
    if !(span > 0.0) {
        return Err(Error::Unidentifiable("all biases are equal"));
    }

    let log_half_phi0 = libm::log(phi0 / 2.0);
    // theta = (delta, ln width, center)
    let cost = |theta: &[f64]| -> f64 {
        let (delta, width, center) = (theta[0], libm::exp(theta[1]), theta[2]);
        if !(delta > 0.0) {
            return f64::INFINITY;
        }
        pts.iter()
            .map(|&(x, lr)| {
                let model = log_half_phi0 - delta - log_cosh((x - center) / width);
                (model - lr) * (model - lr)
            })
            .sum()
    };

    let peak = pts.iter().copied().fold((0.0, f64::NEG_INFINITY), |best, p| if p.1 > best.1 { p } else { best });
    let delta_peak = log_half_phi0 - peak.1;

    let mut best = ([delta_peak, libm::log(span / 10.0), peak.0], f64::INFINITY);
    for k in 0..=12 {
        let delta = delta_peak - 1.0 + 0.5 * k as f64;
        if delta <= 0.0 {
            continue;
        }
        for m in 0..=24 {
            let width = span * libm::pow(10.0, -3.0 + 0.125 * m as f64);
            for c in 0..=20 {
                let center = x_min + span * c as f64 / 20.0;
                let theta = [delta, libm::log(width), center];
                let v = cost(&theta);
                if v < best.1 {
                    best = (theta, v);
                }
            }
        }
    }

    let nm = NelderMead::default();
    let mut theta = best.0.to_vec();
    let mut value = best.1;
    for _ in 0..3 {
        let scale = [0.5, 0.3, span / 20.0];
        let (t, v) = nm.minimize(cost, &theta, &scale);
        let improved = v < value;
        theta = t;
        value = v;
        if !improved {
            break;
        }
    }

    let delta = theta[0];
    let width = libm::exp(theta[1]);
    let params = JunctionParams { delta, v_c: width * delta, phi0, v0: theta[2], resistance: None };
    params.validate()?;
    Ok(FitReport { params, log_rms: libm::sqrt(value / pts.len() as f64) })
}

fn log_cosh(a: f64) -> f64 {
    let a = libm::fabs(a);
    a + libm::log1p(libm::exp(-2.0 * a)) - core::f64::consts::LN_2
}

/// Full-cycle rate of a two-level resistance trace sampled every `dt`.
///
/// Each threshold crossing is one transition; a cycle is two of them. The
/// rate is cycles over the trace duration `len * dt`. A trace that never
/// crosses the threshold has rate 0.
pub fn rate_from_trace(resistance: &[f64], dt: f64, threshold: f64) -> Result<f64> {
    check_positive("dt", dt)?;
    if resistance.is_empty() {
        return Ok(0.0);
    }
    let mut above = resistance[0] >= threshold;
    let mut transitions = 0u64;
    for &r in &resistance[1..] {
        let now = r >= threshold;
        if now != above {
            transitions += 1;
            above = now;
        }
    }
    Ok(transitions as f64 / 2.0 / (resistance.len() as f64 * dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use approx::assert_relative_eq;

    fn scaled() -> JunctionParams {
        JunctionParams::new(6.0, 0.1).unwrap()
    }

    #[test]
    fn escape_rates_at_symmetric_point_and_critical_bias() {
        let p = scaled();
        let e = escape_rates(&p, 0.0);
        assert_relative_eq!(e.parallel, 2.4788e6, max_relative = 1e-4);
        assert_relative_eq!(e.antiparallel, e.parallel);
        let e = escape_rates(&p, 0.1);
        assert_relative_eq!(e.parallel, 1e9 * (-12.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(e.parallel, 6.144e3, max_relative = 1e-3);
        assert_relative_eq!(e.antiparallel, 1e9, max_relative = 1e-12);
    }

    #[test]
    fn escape_rates_experimental_junction() {
        // direct scalar evaluation: 1e9 * exp(-13.78 * (1 +/- 0.05/0.142))
        let p = JunctionParams::new(13.78, 0.142).unwrap();
        let e = escape_rates(&p, 0.05);
        let tilt = 0.05 / 0.142;
        let expect_p = 1e9 * libm::exp(-13.78 * (1.0 + tilt));
        let expect_ap = 1e9 * libm::exp(-13.78 * (1.0 - tilt));
        assert_relative_eq!(e.parallel, expect_p, max_relative = 1e-12);
        assert_relative_eq!(e.antiparallel, expect_ap, max_relative = 1e-12);
        assert_relative_eq!(e.parallel, 8.0942, max_relative = 1e-4);
        assert_relative_eq!(e.antiparallel, 1.32638e5, max_relative = 1e-5);
    }

    #[test]
    fn escape_rate_underflow_is_zero() {
        let p = JunctionParams::new(40.0, 0.1).unwrap();
        assert_eq!(escape_rates(&p, 1e3).parallel, 0.0);
    }

    #[test]
    fn switch_probability_examples() {
        assert_eq!(switch_probability(1234.0, 0.0), 0.0);
        let dt = 1e-3;
        assert_relative_eq!(switch_probability(core::f64::consts::LN_2 / dt, dt), 0.5, max_relative = 1e-12);
        assert_relative_eq!(switch_probability(1036.0, 439e-6), 0.365_42, max_relative = 1e-4);
        assert_eq!(switch_probability(f64::INFINITY, 1.0), 1.0);
    }

    #[test]
    fn step_respects_the_draw() {
        let p = scaled();
        let s = JunctionState::new(Orientation::Parallel);
        let stepper = Stepper::new(&p, 0.0, 1e-9);
        // p ~ 2.5e-3; a fixed stream should mostly leave the state alone
        let mut rng = StreamKey::new(1).rng();
        let (next, flipped) = stepper.advance(s, &mut rng);
        if !flipped {
            assert_eq!(next.orientation, Orientation::Parallel);
            assert_relative_eq!(next.elapsed, 1e-9);
        }
        let never = Stepper { p_parallel: 0.0, p_antiparallel: 0.0, dt: 1.0 };
        for _ in 0..100 {
            assert!(!never.advance(s, &mut rng).1);
        }
    }

    #[test]
    fn strong_bias_freezes_the_favoured_state() {
        let p = scaled();
        let mut rng = StreamKey::new(2).rng();
        let mut ap = JunctionState::new(Orientation::AntiParallel);
        let mut par = JunctionState::new(Orientation::Parallel);
        for _ in 0..10_000 {
            ap = step(ap, &p, -0.3, 1e-7, &mut rng);
            par = step(par, &p, 0.3, 1e-7, &mut rng);
        }
        assert_eq!(ap.orientation, Orientation::AntiParallel);
        assert_eq!(par.orientation, Orientation::Parallel);
    }

    #[test]
    fn natural_rates_match_reported_values() {
        assert_relative_eq!(analytic_rate(&scaled(), 0.0), 1.2394e6, max_relative = 1e-4);
        let exp = JunctionParams::new(13.78, 0.142).unwrap();
        assert_relative_eq!(analytic_rate(&exp, 0.0), 518.0, max_relative = 0.01);
    }

    #[test]
    fn inversion_examples() {
        let p = scaled();
        let r0 = p.natural_rate();
        assert_eq!(invert_rate(&p, r0).unwrap(), Inversion { v_eff: 0.0, clamped: false });
        let inv = invert_rate(&p, r0 / 1.0f64.cosh()).unwrap();
        assert_relative_eq!(inv.v_eff, 0.1 / 6.0, max_relative = 1e-12);
        assert_eq!(invert_rate(&p, 2.0 * r0).unwrap(), Inversion { v_eff: 0.0, clamped: true });
        assert!(matches!(invert_rate(&p, 0.0), Err(Error::RateNotRepresentable(_))));
        assert!(invert_rate(&p, -1.0).is_err());
        assert!(invert_rate(&p, f64::NAN).is_err());
    }

    #[test]
    fn sot_shift_scaling() {
        let p = JunctionParams::new(13.0, 0.3).unwrap();
        let g = SotGeometry::new(11e-9, 1.7e-9, 5e-9, 200e-9, 3e-4).unwrap();
        assert_eq!(sot_effective_shift(&g, 0.0, &p), 0.0);
        let s = sot_effective_shift(&g, 1e-4, &p);
        // 0.3 * (11e-9 * 1.7e-9 * 1e-4) / (200e-9 * 5e-9 * 3e-4)
        assert_relative_eq!(s, 0.3 * 1.87e-21 / 3.0e-19, max_relative = 1e-12);
        assert_relative_eq!(s, 1.87e-3, max_relative = 1e-9);
        let wide = SotGeometry { w: 400e-9, ..g };
        assert_relative_eq!(sot_effective_shift(&wide, 1e-4, &p), s / 2.0, max_relative = 1e-12);
        assert_relative_eq!(analytic_rate_with_sot(&p, 0.01, &g, 1e-4), analytic_rate(&p, 0.01 + s), max_relative = 1e-12);
        assert!(SotGeometry::new(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn rate_from_trace_basics() {
        assert_eq!(rate_from_trace(&[5.0; 100], 1e-3, 2.0).unwrap(), 0.0);
        // square wave, period 40 samples, phase so that each period holds two crossings
        let dt = 1e-4;
        let trace: Vec<f64> = (0..4000).map(|k| if ((k + 10) / 20) % 2 == 0 { 1.0 } else { 3.0 }).collect();
        assert_relative_eq!(rate_from_trace(&trace, dt, 2.0).unwrap(), 1.0 / (40.0 * dt), max_relative = 1e-12);
        assert!(rate_from_trace(&trace, 0.0, 2.0).is_err());
    }

    #[test]
    fn fit_rejects_degenerate_samples() {
        let flat: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 100.0)).collect();
        assert!(matches!(fit_params(&flat, 1e9), Err(Error::Unidentifiable(_))));
        assert!(fit_params(&[(0.0, 1.0), (1.0, 2.0)], 1e9).is_err());
    }
}
