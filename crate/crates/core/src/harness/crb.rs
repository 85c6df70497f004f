//! Cramér–Rao bounds for specular components in coloured Gaussian noise.
//!
//! Real parameters per component, in order: `tau, phi, Re alpha, Im alpha`.
//! With `mu = sum_k alpha_k s(psi_k)` the Fisher information is
//! `F = 2 Re{D^H Q^-1 D}`, `D` holding the derivatives of `mu`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DispersionVector, SteeringModel, SPEED_OF_LIGHT};
use crate::noise::StructuredCovariance;

/// Smallest eigenvalue of the diagonally scaled FIM accepted as regular.
const MIN_SCALED_EIGENVALUE: f64 = 1e-10;

/// Per-component variance bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentCrb {
    /// s^2.
    pub tau: f64,
    /// rad^2.
    pub phi: f64,
    pub amp_re: f64,
    pub amp_im: f64,
}

impl ComponentCrb {
    /// Root CRB of the distance `c tau`, meters.
    pub fn distance_std(&self) -> f64 {
        SPEED_OF_LIGHT * self.tau.sqrt()
    }
}

/// Columns of `D` for the given components.
pub fn mean_jacobian(
    model: &SteeringModel,
    psi: &[DispersionVector],
    alpha: &[Complex64],
) -> DMatrix<Complex64> {
    let d = model.dim();
    let mut out = DMatrix::zeros(d, 4 * psi.len());
    let j = Complex64::new(0.0, 1.0);
    let mut s = vec![Complex64::new(0.0, 0.0); d];
    let mut dt = s.clone();
    let mut dp = s.clone();
    for (k, (p, a)) in psi.iter().zip(alpha).enumerate() {
        model.steering_with_jacobian(p, &mut s, &mut dt, &mut dp);
        for i in 0..d {
            out[(i, 4 * k)] = a * dt[i];
            out[(i, 4 * k + 1)] = a * dp[i];
            out[(i, 4 * k + 2)] = s[i];
            out[(i, 4 * k + 3)] = j * s[i];
        }
    }
    out
}

/// `2 Re{D^H Q^-1 D}`.
pub fn fisher_from_jacobian(d: &DMatrix<Complex64>, cov: &StructuredCovariance) -> DMatrix<f64> {
    let p = d.ncols();
    let whitened: Vec<DVector<Complex64>> = (0..p).map(|c| cov.apply_inverse(&d.column(c).into_owned())).collect();
    let mut f = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let v = 2.0 * d.column(a).dotc(&whitened[b]).re;
            f[(a, b)] = v;
            f[(b, a)] = v;
        }
    }
    f
}

pub fn fisher_information(
    model: &SteeringModel,
    psi: &[DispersionVector],
    alpha: &[Complex64],
    cov: &StructuredCovariance,
) -> DMatrix<f64> {
    fisher_from_jacobian(&mean_jacobian(model, psi, alpha), cov)
}

/// Inverse of a Fisher matrix, or [`Error::SingularFim`] when some parameter
/// combination carries no information.
pub fn invert_fisher(f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = f.nrows();
    let diag: Vec<f64> = (0..p).map(|i| f[(i, i)]).collect();
    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::SingularFim);
    }
    let scale = DVector::from_iterator(p, diag.iter().map(|d| 1.0 / d.sqrt()));
    let scaled = DMatrix::from_fn(p, p, |i, j| f[(i, j)] * scale[i] * scale[j]);
    let min_eig = scaled.clone().symmetric_eigenvalues().min();
    if !(min_eig > MIN_SCALED_EIGENVALUE) {
        return Err(Error::SingularFim);
    }
    let inv = scaled.cholesky().ok_or(Error::SingularFim)?.inverse();
    Ok(DMatrix::from_fn(p, p, |i, j| inv[(i, j)] * scale[i] * scale[j]))
}

/// Variance bounds for every component.
pub fn crb(
    model: &SteeringModel,
    psi: &[DispersionVector],
    alpha: &[Complex64],
    cov: &StructuredCovariance,
) -> Result<Vec<ComponentCrb>> {
    if psi.len() != alpha.len() || psi.is_empty() {
        return Err(Error::InvalidParameter("CRB needs matching, non-empty psi and alpha".into()));
    }
    let inv = invert_fisher(&fisher_information(model, psi, alpha, cov))?;
    Ok((0..psi.len())
        .map(|k| ComponentCrb {
            tau: inv[(4 * k, 4 * k)],
            phi: inv[(4 * k + 1, 4 * k + 1)],
            amp_re: inv[(4 * k + 2, 4 * k + 2)],
            amp_im: inv[(4 * k + 3, 4 * k + 3)],
        })
        .collect())
}

/// Fisher matrix from central differences of the mean, for checking
/// [`fisher_information`].
pub fn fisher_information_numeric(
    model: &SteeringModel,
    psi: &[DispersionVector],
    alpha: &[Complex64],
    cov: &StructuredCovariance,
) -> DMatrix<f64> {
    let mean = |psi: &[DispersionVector], alpha: &[Complex64]| {
        let mut mu = DVector::zeros(model.dim());
        for (p, a) in psi.iter().zip(alpha) {
            mu += model.steering_vector(p) * *a;
        }
        mu
    };
    let bw = model.spectrum.bandwidth();
    let mut d = DMatrix::zeros(model.dim(), 4 * psi.len());
    for k in 0..psi.len() {
        for c in 0..4 {
            let h = match c {
                0 => 1e-4 / bw,
                1 => 1e-6,
                _ => 1e-6 * alpha[k].norm().max(1.0),
            };
            let shifted = |sign: f64| {
                let mut p = psi.to_vec();
                let mut a = alpha.to_vec();
                match c {
                    0 => p[k].tau += sign * h,
                    1 => p[k].phi += sign * h,
                    2 => a[k].re += sign * h,
                    _ => a[k].im += sign * h,
                }
                mean(&p, &a)
            };
            let col = (shifted(1.0) - shifted(-1.0)) / Complex64::from(2.0 * h);
            d.set_column(4 * k + c, &col);
        }
    }
    fisher_from_jacobian(&d, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrayGeometry, DispersionDomain, PulseSpectrum};
    use crate::noise::{build_structured_covariance, DmcParams};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn model(rows: usize, cols: usize, spectrum: PulseSpectrum) -> SteeringModel {
        SteeringModel::new(ArrayGeometry::uniform_rectangular(rows, cols, 0.025, 0.0).unwrap(), spectrum, true)
    }

    #[test]
    fn single_component_white_noise_delay_bound() {
        let spec = PulseSpectrum::flat(1e9, 6e9, 33).unwrap();
        let m = model(3, 3, spec.clone());
        let sigma2 = 0.2;
        let cov = StructuredCovariance::white(sigma2, 33, 9).unwrap();
        let alpha = Complex64::from_polar(0.7, 1.1);
        let psi = DispersionVector::new(12e-9, 0.4);
        let c = crb(&m, &[psi], &[alpha], &cov).unwrap()[0];
        // flat spectrum: beta_rms^2 = mean of f_n^2
        let n = 33.0;
        let delta = spec.delta();
        let beta2 = delta * delta * (n * n - 1.0) / 12.0;
        let snr_eff = alpha.norm_sqr() * m.steering_vector(&psi).norm_squared() / sigma2;
        let classical = 1.0 / (8.0 * PI * PI * snr_eff * beta2);
        assert_relative_eq!(c.tau, classical, max_relative = 0.01);
        assert!(c.phi > 0.0 && c.amp_re > 0.0 && c.amp_im > 0.0);
    }

    #[test]
    fn doubling_power_halves_bounds() {
        let spec = PulseSpectrum::root_raised_cosine(0.6, 1.6e9, 6e9, 27).unwrap();
        let m = model(2, 3, spec.clone());
        let cov = StructuredCovariance::white(1.0, 27, 6).unwrap();
        let psi = [DispersionVector::new(5e-9, 0.3), DispersionVector::new(9e-9, -1.0)];
        let a = [Complex64::new(1.0, 0.5), Complex64::new(-0.3, 0.8)];
        let a2: Vec<Complex64> = a.iter().map(|x| x * 2f64.sqrt()).collect();
        let c1 = crb(&m, &psi, &a, &cov).unwrap();
        let c2 = crb(&m, &psi, &a2, &cov).unwrap();
        for (x, y) in c1.iter().zip(&c2) {
            assert_relative_eq!(y.tau, x.tau / 2.0, max_relative = 1e-9);
            assert_relative_eq!(y.phi, x.phi / 2.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn single_antenna_has_no_angle_information() {
        let spec = PulseSpectrum::flat(1e9, 6e9, 16).unwrap();
        let m = SteeringModel::new(ArrayGeometry::new(vec![[0.0, 0.0]], 0.0).unwrap(), spec, true);
        let cov = StructuredCovariance::white(1.0, 16, 1).unwrap();
        let err = crb(&m, &[DispersionVector::new(3e-9, 0.2)], &[Complex64::new(1.0, 0.0)], &cov);
        assert!(matches!(err, Err(Error::SingularFim)));
    }

    #[test]
    fn coincident_components_are_singular() {
        let spec = PulseSpectrum::flat(1e9, 6e9, 16).unwrap();
        let m = model(2, 2, spec);
        let cov = StructuredCovariance::white(1.0, 16, 4).unwrap();
        let p = DispersionVector::new(3e-9, 0.2);
        let err = crb(&m, &[p, p], &[Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.0)], &cov);
        assert!(matches!(err, Err(Error::SingularFim)));
    }

    #[test]
    fn analytic_fim_matches_finite_differences() {
        let spec = PulseSpectrum::root_raised_cosine(0.6, 1.6e9, 6e9, 27).unwrap();
        let m = model(3, 3, spec.clone());
        let domain = DispersionDomain::unambiguous(&spec);
        let eta = DmcParams {
            sigma2: 0.1,
            dmc_power: 0.5,
            beta: 1e-9,
            theta: 4e-9,
            xi: 1.6,
        };
        let cov = build_structured_covariance(&eta, &spec, 9, &domain).unwrap();
        let psi = [DispersionVector::new(6e-9, 0.5), DispersionVector::new(7e-9, 1.2)];
        let a = [Complex64::new(1.0, -0.4), Complex64::new(0.2, 0.9)];
        let f = fisher_information(&m, &psi, &a, &cov);
        let g = fisher_information_numeric(&m, &psi, &a, &cov);
        let scale = f.norm();
        assert!((f - g).norm() < 1e-3 * scale);
    }
}
