//! Pruning threshold from the excursion probability of a chi-square field.
//!
//! Under the noise-only hypothesis the normalized statistic `|rho|^2 / zeta`
//! seen across the dispersion domain behaves like a chi-square random field
//! with two degrees of freedom. Its excursion probability above `kappa` is
//! asymptotically `q kappa exp(-kappa)`, where the constant `q` depends only on
//! the array and frequency apertures and the noise covariance.

use std::f64::consts::{E, PI, TAU};

use nalgebra::{DVector, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{DispersionVector, SteeringModel};
use crate::noise::StructuredCovariance;
use crate::quadrature::composite;

const GL_ORDER: usize = 16;
const QUAD_TOL: f64 = 1e-10;
const MAX_DOUBLINGS: usize = 8;

/// Covariance of the gradient of the normalized field at one dispersion point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMetric {
    pub lambda: [[f64; 2]; 2],
    pub a_tau: f64,
    /// Hz.
    pub b_tau: f64,
    /// `(1/M) sum_m d_m(phi)^2`, s^2.
    pub angular: f64,
}

impl FieldMetric {
    pub fn determinant(&self) -> f64 {
        Matrix2::new(self.lambda[0][0], self.lambda[0][1], self.lambda[1][0], self.lambda[1][1]).determinant()
    }
}

/// Delay factors `(a(tau), b(tau))` of the field metric.
pub fn delay_factors(model: &SteeringModel, cov: &StructuredCovariance, tau: f64) -> (f64, f64) {
    let s = model.spectrum.delay_response(tau);
    let ds = model.spectrum.delay_response_derivative(tau);
    delay_factors_from(&s, &ds, cov)
}

fn delay_factors_from(s: &DVector<Complex64>, ds: &DVector<Complex64>, cov: &StructuredCovariance) -> (f64, f64) {
    let qi = cov.inverse_block();
    let x = qi * s;
    let ss = s.dotc(&x).re;
    let dd = ds.dotc(&(qi * ds)).re;
    let cross = ds.dotc(&x).re;
    ab_from_forms(ss, dd, cross)
}

/// Field metric at `psi`. The off-diagonal entries vanish identically.
pub fn field_metric(psi: &DispersionVector, model: &SteeringModel, cov: &StructuredCovariance) -> FieldMetric {
    let (a, b) = delay_factors(model, cov, psi.tau);
    let angular = model.geometry.aperture_term(psi.phi);
    let fc = model.spectrum.center_frequency();
    let four_pi2 = 4.0 * PI * PI;
    FieldMetric {
        lambda: [[four_pi2 * a * b * b, 0.0], [0.0, four_pi2 * angular * fc * fc]],
        a_tau: a,
        b_tau: b,
        angular,
    }
}

/// Integrates `f` over `[a, b]` with composite Gauss–Legendre panels, doubling
/// the panel count until the relative change drops below `QUAD_TOL`.
fn integrate_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> Result<f64> {
    let mut panels = panels.max(1);
    let mut prev = composite(a, b, panels, GL_ORDER).integrate(f);
    let mut change = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        panels *= 2;
        let next = composite(a, b, panels, GL_ORDER).integrate(f);
        change = (next - prev).abs();
        if change <= QUAD_TOL * next.abs().max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureNotConverged { change })
}

/// `int_0^{2 pi} sqrt((1/M) sum_m d_m(phi)^2) dphi`.
///
/// The radicand is the quadratic form `v^T C v` with `v = [-sin, cos]`; after
/// rotating to the eigenbasis of `C` the integrand is smooth on each quarter
/// period, which keeps Gauss–Legendre accurate even for linear arrays where
/// the square root has kinks.
pub fn angular_integral(model: &SteeringModel) -> Result<f64> {
    let g = &model.geometry;
    let m = g.len() as f64;
    let c2 = crate::model::SPEED_OF_LIGHT.powi(2);
    let mut cxx = 0.0;
    let mut cxy = 0.0;
    let mut cyy = 0.0;
    for k in 0..g.len() {
        let o = g.offset(k);
        cxx += o[0] * o[0] / (m * c2);
        cxy += o[0] * o[1] / (m * c2);
        cyy += o[1] * o[1] / (m * c2);
    }
    let eig = Matrix2::new(cxx, cxy, cxy, cyy).symmetric_eigenvalues();
    let l1 = eig[0].max(eig[1]).max(0.0);
    let l2 = eig[0].min(eig[1]).max(0.0);
    if l1 == 0.0 {
        return Ok(0.0);
    }
    let f = |t: f64| (l1 * t.cos().powi(2) + l2 * t.sin().powi(2)).sqrt();
    Ok(4.0 * integrate_adaptive(&f, 0.0, PI / 2.0, 4)?)
}

/// The three quadratic forms behind `(a, b)` as trigonometric polynomials in
/// `tau`, so each evaluation is O(N) instead of two dense products.
struct DelayForms {
    ss: Vec<Complex64>,
    dd: Vec<Complex64>,
    sd: Vec<Complex64>,
    delta: f64,
}

impl DelayForms {
    fn new(model: &SteeringModel, cov: &StructuredCovariance) -> Self {
        let spec = &model.spectrum;
        let n = spec.len();
        let s = spec.samples();
        let qi = cov.inverse_block();
        let zero = Complex64::new(0.0, 0.0);
        let (mut ss, mut dd, mut sd) = (vec![zero; 2 * n - 1], vec![zero; 2 * n - 1], vec![zero; 2 * n - 1]);
        for i in 0..n {
            let wi = TAU * spec.frequency(i);
            for j in 0..n {
                let wj = TAU * spec.frequency(j);
                let g = s[i].conj() * qi[(i, j)] * s[j];
                let k = i + n - 1 - j;
                ss[k] += g;
                dd[k] += g * (wi * wj);
                sd[k] += g * Complex64::new(0.0, wi);
            }
        }
        Self { ss, dd, sd, delta: spec.delta() }
    }

    fn factors(&self, tau: f64) -> (f64, f64) {
        let n = (self.ss.len() + 1) / 2;
        let step = Complex64::cis(TAU * self.delta * tau);
        let mut z = Complex64::cis(-TAU * self.delta * tau * (n - 1) as f64);
        let (mut ss, mut dd, mut cross) = (0.0, 0.0, 0.0);
        for k in 0..self.ss.len() {
            ss += (self.ss[k] * z).re;
            dd += (self.dd[k] * z).re;
            cross += (self.sd[k] * z).re;
            z *= step;
        }
        ab_from_forms(ss, dd, cross)
    }
}

fn ab_from_forms(ss: f64, dd: f64, cross: f64) -> (f64, f64) {
    let a = if ss > 0.0 && dd > 0.0 {
        (1.0 - cross * cross / (ss * dd)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let b = (dd / (4.0 * PI * PI * ss)).max(0.0).sqrt();
    (a, b)
}

/// `int_0^{range} sqrt(a(tau)) b(tau) dtau`.
pub fn delay_integral(model: &SteeringModel, cov: &StructuredCovariance, range: f64) -> Result<f64> {
    let forms = DelayForms::new(model, cov);
    let f = |tau: f64| {
        let (a, b) = forms.factors(tau);
        a.sqrt() * b
    };
    let cells = (range * model.spectrum.bandwidth()).ceil().max(1.0) as usize;
    integrate_adaptive(&f, 0.0, range, cells)
}

/// Excursion constant
/// `q = 4 pi f_c int_0^{range} sqrt(a) b dtau int_0^{2 pi} sqrt((1/M) sum d_m^2) dphi`.
///
/// `delay_range` defaults to the unambiguous range `1/delta` when `None`.
pub fn excursion_constant_q(
    model: &SteeringModel,
    cov: &StructuredCovariance,
    delay_range: Option<f64>,
) -> Result<f64> {
    let range = delay_range.unwrap_or(1.0 / model.spectrum.delta());
    if !(range > 0.0) {
        return Err(Error::InvalidParameter("delay range must be positive".into()));
    }
    let fc = model.spectrum.center_frequency();
    Ok(4.0 * PI * fc * delay_integral(model, cov, range)? * angular_integral(model)?)
}

/// Lower real branch `W_{-1}` of the Lambert W function on `[-1/e, 0)`.
pub fn lambert_w_minus1(u: f64) -> Result<f64> {
    let branch = -1.0 / E;
    if !(u < 0.0) || u < branch * (1.0 + 1e-12) || !u.is_finite() {
        return Err(Error::DomainError(u));
    }
    let u = u.max(branch);
    let eu1 = 1.0 + E * u;
    if eu1 <= 0.0 {
        return Ok(-1.0);
    }
    let mut w = if eu1 < 0.25 {
        let p = -(2.0 * eu1).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-u).ln();
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..50 {
        let ew = w.exp();
        let f = w * ew - u;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = (w - step).min(-1.0);
        let done = (next - w).abs() <= 1e-15 * w.abs();
        w = next;
        if done {
            break;
        }
    }
    Ok(w)
}

/// Threshold achieving a target spurious-detection probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub epsilon: f64,
    pub q: f64,
    pub kappa_star: f64,
    /// `-ln(eps/q) + ln(-ln(eps/q))`, for diagnostics.
    pub log_approximation: f64,
}

/// `kappa* = -W_{-1}(-eps/q)`, solving `q kappa exp(-kappa) = eps` with `kappa >= 1`.
pub fn kappa_star(epsilon: f64, q: f64) -> Result<ThresholdSpec> {
    if !(q > 0.0) || !(epsilon > 0.0) || epsilon > q / E * (1.0 + 1e-12) {
        return Err(Error::EpsilonOutOfRange { epsilon, q });
    }
    let r = epsilon / q;
    let kappa = -lambert_w_minus1(-r)?;
    let log_approximation = -r.ln() + (-r.ln()).max(f64::MIN_POSITIVE).ln();
    Ok(ThresholdSpec {
        epsilon,
        q,
        kappa_star: kappa.max(1.0),
        log_approximation,
    })
}

/// Asymptotic spurious-detection probability `min(1, q kappa exp(-kappa))`.
pub fn p_false(kappa: f64, q: f64) -> f64 {
    (q * kappa * (-kappa).exp()).min(1.0)
}

/// Probability that a component with deflection `eta_bar` stays below `kappa`:
/// the CDF at `kappa` of the density `exp(-(x + eta)) I_0(2 sqrt(eta x))`.
///
/// Evaluated as a Poisson mixture of regularized gamma functions,
/// `sum_j Pois(j; eta) P(j + 1, kappa)`, summed outward from the Poisson mode.
pub fn p_miss(kappa: f64, eta_bar: f64) -> f64 {
    if !(kappa > 0.0) {
        return 0.0;
    }
    let eta = eta_bar.max(0.0);
    if eta == 0.0 {
        return -(-kappa).exp_m1();
    }
    let log_pois = |j: f64| -eta + j * eta.ln() - ln_gamma(j + 1.0);
    let mode = eta.floor();
    let term = |j: f64| (log_pois(j).exp() * gamma_lr(j + 1.0, kappa)).max(0.0);
    let mut sum = term(mode);
    let mut j = mode + 1.0;
    loop {
        let t = term(j);
        sum += t;
        if t <= 1e-15 * sum.max(1e-300) && log_pois(j) < -36.0 || j > mode + 1e6 {
            break;
        }
        j += 1.0;
    }
    let mut j = mode - 1.0;
    while j >= 0.0 {
        let t = term(j);
        sum += t;
        if t <= 1e-15 * sum.max(1e-300) && log_pois(j) < -36.0 {
            break;
        }
        j -= 1.0;
    }
    sum.clamp(0.0, 1.0)
}

/// Deflection `eta_bar = |alpha|^2 sum_m s_m^H Q~^-1 s_m` of a component.
pub fn deflection(
    alpha: Complex64,
    psi: &DispersionVector,
    model: &SteeringModel,
    cov: &StructuredCovariance,
) -> f64 {
    let s = model.steering_vector(psi);
    alpha.norm_sqr() * s.dotc(&cov.apply_inverse(&s)).re
}

/// One row of a threshold table.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub kappa: f64,
    pub p_false: f64,
    pub p_miss: f64,
}

/// `p_false` and `p_miss` over a range of thresholds.
pub fn threshold_table(q: f64, eta_bar: f64, kappas: &[f64]) -> Vec<ThresholdRow> {
    kappas
        .iter()
        .map(|&kappa| ThresholdRow {
            kappa,
            p_false: p_false(kappa, q),
            p_miss: p_miss(kappa, eta_bar),
        })
        .collect()
}
