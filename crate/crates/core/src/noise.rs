//! Colored-noise covariance of the dense multipath component plus white noise.
//!
//! The estimator works with `Q = I_M ⊗ Q~`, `Q~ = P Q_f + sigma2 I_N`, where
//! `Q_f` is the delay correlation induced by a truncated gamma delay power
//! spectrum. The general wideband covariance used to generate mismatched data
//! is available through [`build_full_dmc_covariance`].

use std::f64::consts::TAU;

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{DispersionDomain, PulseSpectrum, SteeringModel};
use crate::quadrature::{graded, periodic_nodes, Rule};

const GL_ORDER: usize = 16;
const GRADED_LEVELS: usize = 20;
const MAX_DOUBLINGS: usize = 6;
const QUAD_TOL: f64 = 1e-9;
/// Angle nodes of the periodic trapezoid rule.
pub const ANGLE_NODES: usize = 720;
/// Default cap on `N * M` for dense covariance construction.
pub const DEFAULT_DIMENSION_CAP: usize = 4096;

/// Noise parameters `eta = [sigma2, P, beta, theta, xi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmcParams {
    pub sigma2: f64,
    pub dmc_power: f64,
    /// Onset delay, seconds.
    pub beta: f64,
    /// Scale, seconds.
    pub theta: f64,
    /// Shape.
    pub xi: f64,
}

impl DmcParams {
    pub fn white(sigma2: f64) -> Self {
        Self {
            sigma2,
            dmc_power: 0.0,
            beta: 0.0,
            theta: 1e-9,
            xi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::InvalidParameter("sigma2 must be positive".into()));
        }
        if !(self.dmc_power >= 0.0) || !self.dmc_power.is_finite() {
            return Err(Error::InvalidParameter("DMC power must be non-negative".into()));
        }
        if !(self.beta >= 0.0) || !(self.theta > 0.0) || !(self.xi > 0.0) {
            return Err(Error::InvalidParameter(
                "delay power spectrum needs beta >= 0, theta > 0, xi > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn dps(&self, domain: &DispersionDomain) -> Result<GammaDps> {
        GammaDps::new(self.beta, self.theta, self.xi, domain.max_delay())
    }
}

/// Truncated, normalized gamma delay power spectrum on `[beta, T)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaDps {
    beta: f64,
    theta: f64,
    xi: f64,
    max_delay: f64,
    normalizer: f64,
    ln_coeff: f64,
}

impl GammaDps {
    pub fn new(beta: f64, theta: f64, xi: f64, max_delay: f64) -> Result<Self> {
        if !(beta >= 0.0) || !(theta > 0.0) || !(xi > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "invalid gamma DPS beta={beta:e} theta={theta:e} xi={xi}"
            )));
        }
        if !(beta < max_delay) {
            return Err(Error::InvalidParameter("onset beta must lie below the maximum delay".into()));
        }
        let mass = gamma_lr(xi, (max_delay - beta) / theta);
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter("gamma DPS has no mass inside the domain".into()));
        }
        let normalizer = 1.0 / mass;
        if (normalizer - 1.0).abs() > 1e-3 {
            debug!("gamma DPS normalizer a = {normalizer:.6} (truncation at T is noticeable)");
        }
        let ln_coeff = normalizer.ln() - xi * theta.ln() - ln_gamma(xi);
        Ok(Self {
            beta,
            theta,
            xi,
            max_delay,
            normalizer,
            ln_coeff,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Density `p(tau)`, 1/s.
    pub fn pdf(&self, tau: f64) -> f64 {
        if tau < self.beta || tau >= self.max_delay {
            return 0.0;
        }
        self.pdf_offset(tau - self.beta)
    }

    /// Density at offset `u = tau - beta >= 0` from the onset.
    fn pdf_offset(&self, u: f64) -> f64 {
        if u == 0.0 {
            return if self.xi < 1.0 {
                f64::INFINITY
            } else if self.xi == 1.0 {
                self.ln_coeff.exp()
            } else {
                0.0
            };
        }
        (self.ln_coeff + (self.xi - 1.0) * u.ln() - u / self.theta).exp()
    }

    /// Mode of the untruncated density.
    pub fn mode(&self) -> f64 {
        self.beta + (self.xi - 1.0).max(0.0) * self.theta
    }

    /// Characteristic samples `Phi(k) = int p(tau) exp(-j 2 pi k delta tau) dtau`
    /// for `k = 0..count`, with panel doubling until converged.
    pub fn characteristic(&self, delta: f64, count: usize) -> Result<Vec<Complex64>> {
        let span = self.max_delay - self.beta;
        let tb = (span * delta * count.max(1) as f64).ceil().max(1.0);
        let mut panels = ((4.0 * tb) / GL_ORDER as f64).ceil().max(1.0) as usize;
        let mut prev = self.characteristic_with(delta, count, panels);
        for _ in 0..MAX_DOUBLINGS {
            panels *= 2;
            let next = self.characteristic_with(delta, count, panels);
            let change = phi_change(&prev, &next);
            let scale = next.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt().max(1.0);
            if change <= QUAD_TOL * scale {
                return Ok(next);
            }
            prev = next;
        }
        let change = {
            let next = self.characteristic_with(delta, count, panels * 2);
            phi_change(&prev, &next)
        };
        Err(Error::QuadratureNotConverged { change })
    }

    fn characteristic_with(&self, delta: f64, count: usize, panels: usize) -> Vec<Complex64> {
        let (rule, eps) = graded(0.0, self.max_delay - self.beta, panels, GL_ORDER, GRADED_LEVELS);
        let dens: Vec<f64> = rule.nodes.iter().map(|&u| self.pdf_offset(u)).collect();
        // innermost sliver [beta, beta + eps] to leading order
        let inner = (self.ln_coeff + self.xi * eps.ln() - self.xi.ln()).exp();
        let mut acc = vec![Complex64::new(0.0, 0.0); count];
        // powers of exp(-j 2 pi delta u) by recurrence, one node at a time
        for ((&u, &wt), &p) in rule.nodes.iter().zip(&rule.weights).zip(&dens) {
            let step = Complex64::cis(-TAU * delta * u);
            let mut z = Complex64::new(wt * p, 0.0);
            for a in acc.iter_mut() {
                *a += z;
                z *= step;
            }
        }
        acc.iter()
            .enumerate()
            .map(|(k, body)| Complex64::cis(-TAU * k as f64 * delta * self.beta) * (body + inner))
            .collect()
    }

    /// Plain numerical integral of the density over `[beta, T)`.
    pub fn total_mass(&self) -> f64 {
        let (rule, eps) = graded(0.0, self.max_delay - self.beta, 64, GL_ORDER, GRADED_LEVELS);
        let inner = (self.ln_coeff + self.xi * eps.ln() - self.xi.ln()).exp();
        Rule::integrate(&rule, |u| self.pdf_offset(u)) + inner
    }
}

fn phi_change(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Delay correlation `Q_f = int p(tau) s_f(tau) s_f(tau)^H dtau`.
///
/// Entry `(n, n')` equals `S_n conj(S_n') Phi(n - n')`.
pub fn delay_correlation(spectrum: &PulseSpectrum, dps: &GammaDps) -> Result<DMatrix<Complex64>> {
    let n = spectrum.len();
    let phi = dps.characteristic(spectrum.delta(), n)?;
    let s = spectrum.samples();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let c = if i >= j { phi[i - j] } else { phi[j - i].conj() };
        s[i] * s[j].conj() * c
    }))
}

/// Uniform angular power spectrum on `[-pi, pi)`.
pub fn uniform_aps(_phi: f64) -> f64 {
    1.0 / TAU
}

/// Spatial correlation `Q_s = int p(phi) s_s(phi) s_s(phi)^H dphi` with
/// `[s_s]_m = exp(j 2 pi f_c g_m(phi))`.
pub fn spatial_correlation(
    model: &SteeringModel,
    aps: &dyn Fn(f64) -> f64,
) -> Result<DMatrix<Complex64>> {
    let m = model.n_ant();
    let fc = model.spectrum.center_frequency();
    let (nodes, h) = periodic_nodes(ANGLE_NODES);
    let mut full = DMatrix::<Complex64>::zeros(m, m);
    let mut half = DMatrix::<Complex64>::zeros(m, m);
    for (idx, &phi) in nodes.iter().enumerate() {
        let w = aps(phi) * h;
        let v = DVector::from_iterator(
            m,
            (0..m).map(|k| Complex64::cis(TAU * fc * model.geometry.relative_delay(phi, k))),
        );
        let outer = &v * v.adjoint();
        full += &outer * Complex64::from(w);
        if idx % 2 == 0 {
            half += outer * Complex64::from(2.0 * w);
        }
    }
    check_angle_convergence(&full, &half)?;
    Ok(full)
}

fn check_angle_convergence(full: &DMatrix<Complex64>, half: &DMatrix<Complex64>) -> Result<()> {
    let change = (full - half).norm();
    if change > QUAD_TOL * full.norm().max(1.0) {
        return Err(Error::QuadratureNotConverged { change });
    }
    Ok(())
}

/// `Q = I_M ⊗ Q~` with `Q~ = P Q_f + sigma2 I_N`, stored through its block.
#[derive(Clone, Debug)]
pub struct StructuredCovariance {
    n_ant: usize,
    q_tilde: DMatrix<Complex64>,
    chol: Cholesky<Complex64, Dyn>,
    inverse: DMatrix<Complex64>,
    logdet_block: f64,
}

impl StructuredCovariance {
    /// Builds the block from an explicit delay correlation.
    pub fn from_delay_correlation(
        q_f: &DMatrix<Complex64>,
        dmc_power: f64,
        sigma2: f64,
        n_ant: usize,
    ) -> Result<Self> {
        let n = q_f.nrows();
        let mut q_tilde = q_f * Complex64::from(dmc_power);
        for i in 0..n {
            q_tilde[(i, i)] += sigma2;
        }
        hermitize(&mut q_tilde);
        Self::from_block(q_tilde, n_ant)
    }

    pub fn from_block(q_tilde: DMatrix<Complex64>, n_ant: usize) -> Result<Self> {
        let chol = Cholesky::new(q_tilde.clone()).ok_or(Error::NotPositiveDefinite)?;
        let logdet_block = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
        let mut inverse = chol.inverse();
        hermitize(&mut inverse);
        Ok(Self {
            n_ant,
            q_tilde,
            chol,
            inverse,
            logdet_block,
        })
    }

    pub fn white(sigma2: f64, n_freq: usize, n_ant: usize) -> Result<Self> {
        Self::from_block(DMatrix::from_diagonal_element(n_freq, n_freq, Complex64::from(sigma2)), n_ant)
    }

    pub fn n_freq(&self) -> usize {
        self.q_tilde.nrows()
    }

    pub fn n_ant(&self) -> usize {
        self.n_ant
    }

    pub fn dim(&self) -> usize {
        self.n_freq() * self.n_ant
    }

    pub fn q_tilde(&self) -> &DMatrix<Complex64> {
        &self.q_tilde
    }

    /// Lower Cholesky factor of `Q~`.
    pub fn cholesky_factor(&self) -> DMatrix<Complex64> {
        self.chol.l()
    }

    pub fn inverse_block(&self) -> &DMatrix<Complex64> {
        &self.inverse
    }

    /// `log det Q = M log det Q~`.
    pub fn logdet(&self) -> f64 {
        self.n_ant as f64 * self.logdet_block
    }

    pub fn logdet_block(&self) -> f64 {
        self.logdet_block
    }

    /// `Q^-1 x` by block solves.
    pub fn solve(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        self.map_blocks(x, |b| self.chol.solve(&b))
    }

    /// `Q x`.
    pub fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        self.map_blocks(x, |b| &self.q_tilde * b)
    }

    /// `Q^-1 x` through the cached inverse block (faster for many vectors).
    pub fn apply_inverse(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        self.map_blocks(x, |b| &self.inverse * b)
    }

    fn map_blocks<F>(&self, x: &DVector<Complex64>, f: F) -> DVector<Complex64>
    where
        F: Fn(DVector<Complex64>) -> DVector<Complex64>,
    {
        let n = self.n_freq();
        assert_eq!(x.len(), self.dim(), "vector length does not match N*M");
        let mut out = DVector::zeros(x.len());
        for m in 0..self.n_ant {
            let block = f(x.rows(m * n, n).into_owned());
            out.rows_mut(m * n, n).copy_from(&block);
        }
        out
    }

    /// Dense `N M x N M` matrix (for testing and small problems).
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.n_freq();
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for m in 0..self.n_ant {
            out.view_mut((m * n, m * n), (n, n)).copy_from(&self.q_tilde);
        }
        out
    }

    /// Coefficients `c_k`, `k = -(N-1)..=(N-1)`, of the trigonometric
    /// polynomial `s_f(tau)^H Q~^-1 s_f(tau) = sum_k c_k exp(j 2 pi k delta tau)`.
    /// Index `k + N - 1` of the returned vector holds `c_k`.
    pub fn quadratic_form_coefficients(&self, spectrum: &PulseSpectrum) -> Vec<Complex64> {
        let n = self.n_freq();
        let s = spectrum.samples();
        let mut c = vec![Complex64::new(0.0, 0.0); 2 * n - 1];
        for i in 0..n {
            for j in 0..n {
                c[i + n - 1 - j] += s[i].conj() * self.inverse[(i, j)] * s[j];
            }
        }
        c
    }
}

/// Makes a nearly Hermitian matrix exactly Hermitian.
pub fn hermitize(m: &mut DMatrix<Complex64>) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

/// Builds the structured covariance for parameters `eta`.
pub fn build_structured_covariance(
    params: &DmcParams,
    spectrum: &PulseSpectrum,
    n_ant: usize,
    domain: &DispersionDomain,
) -> Result<StructuredCovariance> {
    params.validate()?;
    if params.dmc_power == 0.0 {
        return StructuredCovariance::white(params.sigma2, spectrum.len(), n_ant);
    }
    let dps = params.dps(domain)?;
    let q_f = delay_correlation(spectrum, &dps)?;
    StructuredCovariance::from_delay_correlation(&q_f, params.dmc_power, params.sigma2, n_ant)
}

/// General DMC covariance `P int int p(tau) p(phi) s(tau,phi) s(tau,phi)^H + sigma2 I`
/// evaluated with the given steering model.
///
/// The delay integral factors out: entry `((m,n),(m',n'))` equals
/// `P S_n conj(S_n') Phi(n-n') int p(phi) exp(j 2 pi [(f_c+f_n) g_m - (f_c+f_n') g_m']) dphi`
/// (the carrier term uses `f_c` only in the narrowband model).
pub fn build_full_dmc_covariance(
    model: &SteeringModel,
    dps: &GammaDps,
    aps: &dyn Fn(f64) -> f64,
    dmc_power: f64,
    sigma2: f64,
    cap: usize,
) -> Result<DMatrix<Complex64>> {
    let n = model.n_freq();
    let m = model.n_ant();
    let dim = n * m;
    if dim > cap {
        return Err(Error::DimensionTooLarge { dim, cap });
    }
    let q_f = delay_correlation(&model.spectrum, dps)?;
    let fc = model.spectrum.center_frequency();
    let (nodes, h) = periodic_nodes(ANGLE_NODES);
    let mut full = DMatrix::<Complex64>::zeros(dim, dim);
    let mut half = DMatrix::<Complex64>::zeros(dim, dim);
    let mut u = DVector::<Complex64>::zeros(dim);
    for (idx, &phi) in nodes.iter().enumerate() {
        let w = aps(phi) * h;
        if w == 0.0 {
            continue;
        }
        for a in 0..m {
            let g = model.geometry.relative_delay(phi, a);
            for k in 0..n {
                let rate = if model.wideband { fc + model.spectrum.frequency(k) } else { fc };
                u[a * n + k] = Complex64::cis(TAU * rate * g);
            }
        }
        full.ger(Complex64::from(w), &u, &u.conjugate(), Complex64::from(1.0));
        if idx % 2 == 0 {
            half.ger(Complex64::from(2.0 * w), &u, &u.conjugate(), Complex64::from(1.0));
        }
    }
    check_angle_convergence(&full, &half)?;
    for i in 0..dim {
        for j in 0..dim {
            full[(i, j)] *= q_f[(i % n, j % n)] * dmc_power;
        }
        full[(i, i)] += sigma2;
    }
    hermitize(&mut full);
    Ok(full)
}

/// Lower Cholesky factor of a PSD matrix, retrying once with diagonal jitter
/// `1e-12 trace / n` if the plain factorization fails.
pub fn cholesky_with_jitter(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c.l());
    }
    let n = m.nrows();
    let trace: f64 = (0..n).map(|i| m[(i, i)].re).sum();
    let jitter = 1e-12 * trace / n as f64;
    warn!("Cholesky failed, retrying with diagonal jitter {jitter:e}");
    let mut j = m.clone();
    for i in 0..n {
        j[(i, i)] += jitter;
    }
    Cholesky::new(j).map(|c| c.l()).ok_or(Error::NotPositiveDefinite)
}

/// Smallest and largest eigenvalue of a Hermitian matrix.
pub fn eigen_range(m: &DMatrix<Complex64>) -> (f64, f64) {
    let e = m.clone().symmetric_eigenvalues();
    let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrayGeometry, SPEED_OF_LIGHT};
    use approx::assert_relative_eq;

    fn reference_dps(spectrum: &PulseSpectrum) -> GammaDps {
        GammaDps::new(1.0 / SPEED_OF_LIGHT, 5e-9, 1.8, 1.0 / spectrum.delta()).unwrap()
    }

    fn rrc(n: usize) -> PulseSpectrum {
        PulseSpectrum::root_raised_cosine(0.6, 1.6e9, 6e9, n).unwrap()
    }

    /// Composite Simpson on a fine uniform grid, used as an independent oracle.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
        let h = (b - a) / intervals as f64;
        let mut acc = f(a) + f(b);
        for i in 1..intervals {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn dps_is_zero_before_onset_and_peaks_at_mode() {
        let d = GammaDps::new(3.336e-9, 5e-9, 1.8, 200e-9).unwrap();
        assert_eq!(d.pdf(1e-9), 0.0);
        assert_eq!(d.pdf(200e-9), 0.0);
        assert_relative_eq!(d.mode(), 7.336e-9, max_relative = 1e-12);
        let m = d.mode();
        assert!(d.pdf(m) > d.pdf(m - 1e-11) && d.pdf(m) > d.pdf(m + 1e-11));
    }

    #[test]
    fn dps_integrates_to_one() {
        let d = GammaDps::new(1.0 / SPEED_OF_LIGHT, 5e-9, 1.8, 200e-9).unwrap();
        // continuous density (xi > 1), so composite Simpson converges
        let oracle = simpson(&|t| d.pdf(t), d.beta(), 200e-9, 2_000_000);
        assert!((oracle - 1.0).abs() < 1e-6, "{oracle}");
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
        // singular onset
        let s = GammaDps::new(2e-9, 4e-9, 0.6, 30e-9).unwrap();
        assert!((s.total_mass() - 1.0).abs() < 1e-8, "{}", s.total_mass());
    }

    #[test]
    fn delay_correlation_diagonal_and_structure() {
        let spec = rrc(27);
        let q = delay_correlation(&spec, &reference_dps(&spec)).unwrap();
        for i in 0..27 {
            assert!((q[(i, i)].re - spec.samples()[i].norm_sqr()).abs() < 1e-12);
            assert!(q[(i, i)].im.abs() < 1e-15);
        }
        // D^-1 Q_f D^-H is Toeplitz where S is non-zero
        let s = spec.samples();
        let live: Vec<usize> = (0..27).filter(|&i| s[i].norm() > 1e-12).collect();
        for &i in &live {
            for &j in &live {
                let t = q[(i, j)] / (s[i] * s[j].conj());
                if i > 0 && j > 0 && live.contains(&(i - 1)) && live.contains(&(j - 1)) {
                    let t0 = q[(i - 1, j - 1)] / (s[i - 1] * s[j - 1].conj());
                    assert!((t - t0).norm() < 1e-9);
                }
            }
        }
        let (lo, hi) = eigen_range(&q);
        assert!(lo >= -1e-10 * hi);
    }

    #[test]
    fn point_mass_limit_is_rank_one() {
        let spec = rrc(27);
        let beta = 4e-9;
        let d = GammaDps::new(beta, 1e-15, 1.0, 1.0 / spec.delta()).unwrap();
        let q = delay_correlation(&spec, &d).unwrap();
        let sf = spec.delay_response(beta);
        let expected = &sf * sf.adjoint();
        // residual mismatch is the mean excess delay theta, phase ~ 2 pi B theta
        let err = (&q - &expected).norm() / expected.norm();
        assert!(err < 1e-5, "{err}");
        let e = q.symmetric_eigenvalues();
        let mut e: Vec<f64> = e.iter().cloned().collect();
        e.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(e[1] < 1e-9 * e[0]);
    }

    #[test]
    fn spatial_correlation_oracles() {
        let spec = rrc(27);
        let lambda = SPEED_OF_LIGHT / 6e9;
        let one = SteeringModel::new(ArrayGeometry::new(vec![[0.0, 0.0]], 0.0).unwrap(), spec.clone(), true);
        let q = spatial_correlation(&one, &uniform_aps).unwrap();
        assert!((q[(0, 0)].re - 1.0).abs() < 1e-12);

        let pair = ArrayGeometry::uniform_linear(2, lambda / 2.0, 0.0).unwrap();
        let q = spatial_correlation(&SteeringModel::new(pair, spec.clone(), true), &uniform_aps).unwrap();
        // J0(pi)
        assert!((q[(0, 1)].re + 0.304_242_177_644_093_9).abs() < 1e-10, "{}", q[(0, 1)]);
        assert!(q[(0, 1)].im.abs() < 1e-12);

        let pair = ArrayGeometry::uniform_linear(2, 0.4 * lambda, 0.0).unwrap();
        let q = spatial_correlation(&SteeringModel::new(pair, spec, true), &uniform_aps).unwrap();
        // J0(0.8 pi) ~ -0.0562
        assert!(q[(0, 1)].norm() < 0.1);
    }

    #[test]
    fn white_covariance_closed_forms() {
        let spec = rrc(27);
        let domain = DispersionDomain::unambiguous(&spec);
        let params = DmcParams::white(0.5);
        let q = build_structured_covariance(&params, &spec, 4, &domain).unwrap();
        assert_relative_eq!(q.logdet(), 108.0 * 0.5f64.ln(), max_relative = 1e-12);
        let y = DVector::from_fn(108, |i, _| Complex64::new(i as f64, 1.0));
        assert!((q.solve(&y) - &y * Complex64::from(2.0)).norm() < 1e-10);
    }

    #[test]
    fn structured_solve_round_trip_and_dense_agreement() {
        let spec = rrc(27);
        let domain = DispersionDomain::unambiguous(&spec);
        let params = DmcParams {
            sigma2: 0.01,
            dmc_power: 3.0,
            beta: 1.0 / SPEED_OF_LIGHT,
            theta: 5e-9,
            xi: 1.8,
        };
        let q = build_structured_covariance(&params, &spec, 9, &domain).unwrap();
        let x = DVector::from_fn(243, |i, _| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()));
        let back = q.solve(&q.apply(&x));
        assert!((back - &x).norm() < 1e-8 * x.norm());
        let dense = q.to_dense();
        let chol = Cholesky::new(dense.clone()).unwrap();
        let ld: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
        assert_relative_eq!(q.logdet(), ld, max_relative = 1e-10);
        assert!((q.apply_inverse(&x) - chol.solve(&x)).norm() < 1e-8 * chol.solve(&x).norm());
    }

    #[test]
    fn quadratic_form_coefficients_reproduce_direct_evaluation() {
        let spec = rrc(27);
        let domain = DispersionDomain::unambiguous(&spec);
        let params = DmcParams {
            sigma2: 0.1,
            dmc_power: 1.0,
            beta: 2e-9,
            theta: 5e-9,
            xi: 1.8,
        };
        let q = build_structured_covariance(&params, &spec, 1, &domain).unwrap();
        let c = q.quadratic_form_coefficients(&spec);
        for tau in [0.0, 3.3e-9, 11e-9] {
            let sf = spec.delay_response(tau);
            let direct = (sf.adjoint() * q.inverse_block() * &sf)[(0, 0)];
            let poly: Complex64 = (0..c.len())
                .map(|i| {
                    let k = i as f64 - 26.0;
                    c[i] * Complex64::cis(TAU * k * spec.delta() * tau)
                })
                .sum();
            assert!((direct - poly).norm() < 1e-10 * direct.norm());
        }
    }

    #[test]
    fn full_dmc_single_antenna_reduces_to_block() {
        let spec = rrc(27);
        let dps = reference_dps(&spec);
        let model = SteeringModel::new(ArrayGeometry::new(vec![[0.0, 0.0]], 0.0).unwrap(), spec.clone(), true);
        let full = build_full_dmc_covariance(&model, &dps, &uniform_aps, 2.0, 0.1, DEFAULT_DIMENSION_CAP).unwrap();
        let q_f = delay_correlation(&spec, &dps).unwrap();
        let mut block = q_f * Complex64::from(2.0);
        for i in 0..27 {
            block[(i, i)] += 0.1;
        }
        assert!((&full - &block).norm() < 1e-8 * block.norm());
    }

    #[test]
    fn full_dmc_narrowband_is_kronecker() {
        let spec = rrc(27);
        let dps = reference_dps(&spec);
        let g = ArrayGeometry::uniform_rectangular(2, 2, 0.02, 0.0).unwrap();
        let nb = SteeringModel::new(g, spec.clone(), false);
        let full = build_full_dmc_covariance(&nb, &dps, &uniform_aps, 1.5, 0.2, DEFAULT_DIMENSION_CAP).unwrap();
        let q_s = spatial_correlation(&nb, &uniform_aps).unwrap();
        let q_f = delay_correlation(&spec, &dps).unwrap();
        let mut kron = q_s.kronecker(&q_f) * Complex64::from(1.5);
        for i in 0..kron.nrows() {
            kron[(i, i)] += 0.2;
        }
        assert!((&full - &kron).norm() < 1e-9 * kron.norm());
        let (lo, hi) = eigen_range(&full);
        assert!(lo >= -1e-10 * hi);

        let wb = nb.with_wideband(true);
        let full_wb = build_full_dmc_covariance(&wb, &dps, &uniform_aps, 1.5, 0.2, DEFAULT_DIMENSION_CAP).unwrap();
        assert!((&full_wb - &full).norm() > 1e-6);
        let (lo, hi) = eigen_range(&full_wb);
        assert!(lo >= -1e-10 * hi);
    }

    #[test]
    fn full_dmc_respects_dimension_cap() {
        let spec = rrc(27);
        let dps = reference_dps(&spec);
        let model = SteeringModel::new(ArrayGeometry::uniform_rectangular(3, 3, 0.02, 0.0).unwrap(), spec, true);
        let err = build_full_dmc_covariance(&model, &dps, &uniform_aps, 1.0, 1.0, 100).unwrap_err();
        assert!(matches!(err, Error::DimensionTooLarge { dim: 243, cap: 100 }));
    }
}
