//! Marginal likelihood with the amplitudes integrated out.
//!
//! With `C = Q + S Gamma^-1 S^H` the negative log-likelihood is
//! `log det C + y^H C^-1 y`, evaluated through the inner matrix
//! `A = S^H Q^-1 S + Gamma` so that `C` is never formed.

use std::f64::consts::TAU;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{DispersionDomain, DispersionVector, SteeringModel};
use crate::noise::{build_structured_covariance, DmcParams, StructuredCovariance};

const MAX_CONDITION: f64 = 1e14;

/// Steering model plus dispersion domain.
#[derive(Clone, Debug)]
pub struct ModelContext {
    pub model: SteeringModel,
    pub domain: DispersionDomain,
}

impl ModelContext {
    pub fn new(model: SteeringModel, domain: DispersionDomain) -> Self {
        Self { model, domain }
    }

    /// Context over the full unambiguous delay range.
    pub fn unambiguous(model: SteeringModel) -> Self {
        let domain = DispersionDomain::unambiguous(&model.spectrum);
        Self { model, domain }
    }
}

/// An active component: dispersion point and amplitude precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub psi: DispersionVector,
    pub gamma: f64,
}

/// Noise covariance for a fixed `eta` with the cached quadratic-form polynomial.
#[derive(Clone, Debug)]
pub struct NoiseState {
    pub eta: DmcParams,
    pub cov: StructuredCovariance,
    coeffs: Vec<Complex64>,
}

impl NoiseState {
    pub fn new(eta: DmcParams, ctx: &ModelContext) -> Result<Self> {
        let cov = build_structured_covariance(&eta, &ctx.model.spectrum, ctx.model.n_ant(), &ctx.domain)?;
        let coeffs = cov.quadratic_form_coefficients(&ctx.model.spectrum);
        Ok(Self { eta, cov, coeffs })
    }

    /// Coefficients of the trigonometric polynomial `h_f`, see
    /// [`StructuredCovariance::quadratic_form_coefficients`].
    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// `h_f(tau) = s_f(tau)^H Q~^-1 s_f(tau)` and its derivative.
    fn h_f(&self, delta: f64, tau: f64) -> (f64, f64) {
        let n = (self.coeffs.len() + 1) / 2;
        let z = Complex64::cis(TAU * delta * tau);
        // start at k = -(N-1)
        let mut p = z.powi(-(n as i32 - 1));
        let mut val = Complex64::new(0.0, 0.0);
        let mut der = Complex64::new(0.0, 0.0);
        for (i, c) in self.coeffs.iter().enumerate() {
            let k = i as f64 - (n as f64 - 1.0);
            let term = c * p;
            val += term;
            der += term * Complex64::new(0.0, TAU * k * delta);
            p *= z;
        }
        (val.re, der.re)
    }

    /// `s(psi)^H Q^-1 s(psi)`.
    pub fn steering_energy(&self, model: &SteeringModel, psi: &DispersionVector) -> f64 {
        self.steering_energy_with_gradient(model, psi).0
    }

    /// `s^H Q^-1 s` together with its partial derivatives in `tau` and `phi`.
    pub fn steering_energy_with_gradient(&self, model: &SteeringModel, psi: &DispersionVector) -> (f64, [f64; 2]) {
        let delta = model.spectrum.delta();
        if !model.wideband {
            let (v, d) = self.h_f(delta, psi.tau);
            let m = model.n_ant() as f64;
            return (m * v, [m * d, 0.0]);
        }
        let mut val = 0.0;
        let mut d_tau = 0.0;
        let mut d_phi = 0.0;
        for m in 0..model.n_ant() {
            let g = model.geometry.relative_delay(psi.phi, m);
            let dg = model.geometry.relative_delay_derivative(psi.phi, m);
            let (v, d) = self.h_f(delta, psi.tau - g);
            val += v;
            d_tau += d;
            d_phi -= d * dg;
        }
        (val, [d_tau, d_phi])
    }
}

/// Observation bound to a noise state.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub ctx: &'a ModelContext,
    pub y: &'a DVector<Complex64>,
    pub noise: NoiseState,
    /// `Q^-1 y`.
    pub qy: DVector<Complex64>,
    /// `y^H Q^-1 y`.
    pub yqy: f64,
}

impl<'a> Problem<'a> {
    pub fn new(ctx: &'a ModelContext, y: &'a DVector<Complex64>, eta: DmcParams) -> Result<Self> {
        Self::with_noise(ctx, y, NoiseState::new(eta, ctx)?)
    }

    pub fn with_noise(ctx: &'a ModelContext, y: &'a DVector<Complex64>, noise: NoiseState) -> Result<Self> {
        if y.len() != ctx.model.dim() {
            return Err(Error::InvalidParameter(format!(
                "observation has length {} but the model expects {}",
                y.len(),
                ctx.model.dim()
            )));
        }
        let qy = noise.cov.apply_inverse(y);
        let yqy = y.dotc(&qy).re;
        Ok(Self {
            ctx,
            y,
            noise,
            qy,
            yqy,
        })
    }

    pub fn model(&self) -> &SteeringModel {
        &self.ctx.model
    }

    /// Inner quantities for a component list.
    pub fn inner(&self, comps: &[Component]) -> Result<Inner> {
        let k = comps.len();
        let s: Vec<DVector<Complex64>> = comps.iter().map(|c| self.ctx.model.steering_vector(&c.psi)).collect();
        let w: Vec<DVector<Complex64>> = s.iter().map(|v| self.noise.cov.apply_inverse(v)).collect();
        let mut a = DMatrix::<Complex64>::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let g = s[i].dotc(&w[j]);
                a[(i, j)] = g;
                a[(j, i)] = g.conj();
            }
            a[(i, i)] = Complex64::new(a[(i, i)].re + comps[i].gamma, 0.0);
        }
        let b = DVector::from_iterator(k, w.iter().map(|wi| wi.dotc(self.y)));
        Inner::new(a, b, s, w)
    }

    /// Negative log marginal likelihood `log det C + y^H C^-1 y`.
    pub fn nll(&self, comps: &[Component]) -> Result<f64> {
        let inner = self.inner(comps)?;
        let log_gamma: f64 = comps.iter().map(|c| c.gamma.ln()).sum();
        let quad = inner.b.dotc(&inner.mean).re;
        Ok(self.noise.cov.logdet() - log_gamma + inner.logdet + self.yqy - quad)
    }

    /// Residual state seen by a candidate with every other listed component fixed.
    pub fn residual(&self, comps: &[Component], skip: Option<usize>) -> Result<Residual> {
        let others: Vec<Component> = comps
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, c)| *c)
            .collect();
        let inner = self.inner(&others)?;
        let mut x = self.qy.clone();
        for (wj, mj) in inner.w.iter().zip(inner.mean.iter()) {
            x -= wj * *mj;
        }
        Ok(Residual {
            w: inner.w,
            sigma: inner.sigma,
            x,
        })
    }
}

/// `A = S^H Q^-1 S + Gamma`, its inverse, and `mu = A^-1 S^H Q^-1 y`.
#[derive(Clone, Debug)]
pub struct Inner {
    pub a: DMatrix<Complex64>,
    pub b: DVector<Complex64>,
    pub sigma: DMatrix<Complex64>,
    pub mean: DVector<Complex64>,
    pub logdet: f64,
    pub s: Vec<DVector<Complex64>>,
    pub w: Vec<DVector<Complex64>>,
}

impl Inner {
    fn new(a: DMatrix<Complex64>, b: DVector<Complex64>, s: Vec<DVector<Complex64>>, w: Vec<DVector<Complex64>>) -> Result<Self> {
        let k = a.nrows();
        if k == 0 {
            return Ok(Self {
                a,
                b,
                sigma: DMatrix::zeros(0, 0),
                mean: DVector::zeros(0),
                logdet: 0.0,
                s,
                w,
            });
        }
        let eig = a.clone().symmetric_eigenvalues();
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularInnerMatrix { condition });
        }
        let chol = Cholesky::new(a.clone()).ok_or(Error::SingularInnerMatrix { condition })?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
        let mut sigma = chol.inverse();
        crate::noise::hermitize(&mut sigma);
        let mean = &sigma * &b;
        Ok(Self {
            a,
            b,
            sigma,
            mean,
            logdet,
            s,
            w,
        })
    }
}

/// Test statistic of a candidate: `u = s^H x`, `v = 1/zeta`, `t = |u|^2 / v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub u: Complex64,
    pub v: f64,
    pub t: f64,
}

impl Stat {
    pub fn zeta(&self) -> f64 {
        1.0 / self.v
    }

    pub fn rho(&self) -> Complex64 {
        self.u / self.v
    }
}

/// Everything a candidate needs from the other components:
/// `W = Q^-1 S_o`, `Sigma_o`, and `x = Q^-1 (y - S_o mu_o)`.
#[derive(Clone, Debug)]
pub struct Residual {
    pub w: Vec<DVector<Complex64>>,
    pub sigma: DMatrix<Complex64>,
    pub x: DVector<Complex64>,
}

impl Residual {
    fn finish(&self, u: Complex64, h: f64, c: &DVector<Complex64>) -> Stat {
        let v = if c.is_empty() { h } else { h - c.dotc(&(&self.sigma * c)).re };
        let t = if v > 0.0 { u.norm_sqr() / v } else { 0.0 };
        Stat { u, v, t }
    }

    pub fn stat(&self, prob: &Problem, psi: &DispersionVector) -> Stat {
        let model = prob.model();
        let s = model.steering_vector(psi);
        let u = s.dotc(&self.x);
        let c = DVector::from_iterator(self.w.len(), self.w.iter().map(|w| w.dotc(&s)));
        let h = prob.noise.steering_energy(model, psi);
        self.finish(u, h, &c)
    }

    /// Statistic and its gradient `[dt/dtau, dt/dphi]`.
    pub fn stat_with_gradient(&self, prob: &Problem, psi: &DispersionVector) -> (Stat, [f64; 2]) {
        let model = prob.model();
        let dim = model.dim();
        let mut s = DVector::zeros(dim);
        let mut dt = DVector::zeros(dim);
        let mut dp = DVector::zeros(dim);
        model.steering_with_jacobian(psi, s.as_mut_slice(), dt.as_mut_slice(), dp.as_mut_slice());
        let u = s.dotc(&self.x);
        let k = self.w.len();
        let c = DVector::from_iterator(k, self.w.iter().map(|w| w.dotc(&s)));
        let (h, dh) = prob.noise.steering_energy_with_gradient(model, psi);
        let stat = self.finish(u, h, &c);
        if stat.v <= 0.0 {
            return (stat, [0.0, 0.0]);
        }
        let sc = &self.sigma * &c;
        let mut grad = [0.0; 2];
        for (g, (ds, dhi)) in grad.iter_mut().zip([(&dt, dh[0]), (&dp, dh[1])]) {
            let du = ds.dotc(&self.x);
            let dc = DVector::from_iterator(k, self.w.iter().map(|w| w.dotc(ds)));
            let dv = dhi - 2.0 * dc.dotc(&sc).re;
            *g = (2.0 * (u.conj() * du).re * stat.v - u.norm_sqr() * dv) / (stat.v * stat.v);
        }
        (stat, grad)
    }
}

/// `(zeta_l, rho_l)` for component `l` given the other active components.
pub fn residual_stats(prob: &Problem, comps: &[Component], l: usize) -> Result<(f64, Complex64)> {
    let res = prob.residual(comps, Some(l))?;
    let st = res.stat(prob, &comps[l].psi);
    Ok((st.zeta(), st.rho()))
}

/// `gamma = 1 / (|rho|^2 - zeta)` when `|rho|^2 / zeta > kappa`, else prune (`None`).
pub fn update_gamma(zeta: f64, rho: Complex64, kappa: f64) -> Option<f64> {
    let r2 = rho.norm_sqr();
    if r2 / zeta > kappa && r2 > zeta {
        Some(1.0 / (r2 - zeta))
    } else {
        None
    }
}

/// Marginal NLL for an explicit component list.
pub fn marginal_nll(
    y: &DVector<Complex64>,
    comps: &[Component],
    eta: &DmcParams,
    ctx: &ModelContext,
) -> Result<f64> {
    Problem::new(ctx, y, *eta)?.nll(comps)
}
