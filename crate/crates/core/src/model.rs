//! Signal geometry of a SIMO channel observation.
//!
//! An observation stacks, antenna by antenna, the frequency-domain samples
//! collected at `M` array elements: `y = [y_1; ...; y_M]`, each `y_m` holding
//! `N` samples taken at `f_n = n * delta` around the center frequency. The
//! response to a plane wave with delay `tau` and angle of arrival `phi` is
//!
//! ```text
//! s_{m,n}(tau, phi) = exp(j 2 pi f_c g_m) S(f_n) exp(-j 2 pi f_n (tau - g_m))
//! ```
//!
//! with `g_m = [cos phi, sin phi] . (p_m - p) / c` the excess delay of element
//! `m` relative to the array centroid `p`. The narrowband variant drops the
//! `g_m` inside the envelope phase.

use std::f64::consts::{PI, TAU};

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const CENTRO_SYMMETRY_TOL: f64 = 1e-9;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Planar antenna array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "GeometrySpec", try_from = "GeometrySpec")]
pub struct ArrayGeometry {
    positions: Vec<[f64; 2]>,
    orientation: f64,
    center: [f64; 2],
}

impl ArrayGeometry {
    /// Builds a geometry from absolute element positions (meters) and the
    /// array orientation (radians, metadata only).
    pub fn new(positions: Vec<[f64; 2]>, orientation: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidGeometry("array needs at least one element".into()));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite element position".into()));
        }
        let m = positions.len() as f64;
        let center = positions
            .iter()
            .fold([0.0, 0.0], |acc, p| [acc[0] + p[0] / m, acc[1] + p[1] / m]);
        Ok(Self {
            positions,
            orientation,
            center,
        })
    }

    /// Uniform rectangular array of `rows x cols` elements with equal spacing,
    /// centered at the origin and rotated by `orientation`.
    pub fn uniform_rectangular(
        rows: usize,
        cols: usize,
        spacing: f64,
        orientation: f64,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidGeometry("empty rectangular array".into()));
        }
        if !(spacing > 0.0) {
            return Err(Error::InvalidGeometry("element spacing must be positive".into()));
        }
        let (so, co) = orientation.sin_cos();
        let x0 = (cols as f64 - 1.0) / 2.0;
        let y0 = (rows as f64 - 1.0) / 2.0;
        let mut positions = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let x = (c as f64 - x0) * spacing;
                let y = (r as f64 - y0) * spacing;
                positions.push([co * x - so * y, so * x + co * y]);
            }
        }
        Self::new(positions, orientation)
    }

    /// Uniform linear array along the (rotated) x axis.
    pub fn uniform_linear(elements: usize, spacing: f64, orientation: f64) -> Result<Self> {
        Self::uniform_rectangular(1, elements, spacing, orientation)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn orientation(&self) -> f64 {
        self.orientation
    }

    pub fn center_of_gravity(&self) -> [f64; 2] {
        self.center
    }

    /// Element position relative to the centroid.
    pub fn offset(&self, m: usize) -> [f64; 2] {
        let p = self.positions[m];
        [p[0] - self.center[0], p[1] - self.center[1]]
    }

    /// True if every element has a mirror element through the centroid.
    pub fn is_centro_symmetric(&self) -> bool {
        (0..self.len()).all(|m| {
            let d = self.offset(m);
            (0..self.len()).any(|k| {
                let e = self.offset(k);
                (d[0] + e[0]).abs() < CENTRO_SYMMETRY_TOL && (d[1] + e[1]).abs() < CENTRO_SYMMETRY_TOL
            })
        })
    }

    /// Largest distance between two elements, meters.
    pub fn span(&self) -> f64 {
        let mut best: f64 = 0.0;
        for a in &self.positions {
            for b in &self.positions {
                best = best.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        best
    }

    /// Excess delay `g(phi, p_m)` of element `m` relative to the centroid, seconds.
    pub fn relative_delay(&self, phi: f64, m: usize) -> f64 {
        let d = self.offset(m);
        (phi.cos() * d[0] + phi.sin() * d[1]) / SPEED_OF_LIGHT
    }

    /// Angular derivative `d_m(phi) = dg/dphi`, seconds per radian.
    pub fn relative_delay_derivative(&self, phi: f64, m: usize) -> f64 {
        let d = self.offset(m);
        (-phi.sin() * d[0] + phi.cos() * d[1]) / SPEED_OF_LIGHT
    }

    /// Mean squared angular derivative `(1/M) sum_m d_m(phi)^2`, s^2.
    pub fn aperture_term(&self, phi: f64) -> f64 {
        let m = self.len();
        (0..m)
            .map(|k| self.relative_delay_derivative(phi, k).powi(2))
            .sum::<f64>()
            / m as f64
    }
}

/// Geometry description used in configuration files. Angles in degrees.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometrySpec {
    Positions {
        positions_m: Vec<[f64; 2]>,
        #[serde(default)]
        orientation_deg: f64,
    },
    Rectangular {
        rows: usize,
        cols: usize,
        spacing_m: f64,
        #[serde(default)]
        orientation_deg: f64,
    },
    Linear {
        elements: usize,
        spacing_m: f64,
        #[serde(default)]
        orientation_deg: f64,
    },
}

impl TryFrom<GeometrySpec> for ArrayGeometry {
    type Error = Error;

    fn try_from(spec: GeometrySpec) -> Result<Self> {
        match spec {
            GeometrySpec::Positions {
                positions_m,
                orientation_deg,
            } => ArrayGeometry::new(positions_m, orientation_deg.to_radians()),
            GeometrySpec::Rectangular {
                rows,
                cols,
                spacing_m,
                orientation_deg,
            } => ArrayGeometry::uniform_rectangular(rows, cols, spacing_m, orientation_deg.to_radians()),
            GeometrySpec::Linear {
                elements,
                spacing_m,
                orientation_deg,
            } => ArrayGeometry::uniform_linear(elements, spacing_m, orientation_deg.to_radians()),
        }
    }
}

impl From<ArrayGeometry> for GeometrySpec {
    fn from(g: ArrayGeometry) -> Self {
        GeometrySpec::Positions {
            positions_m: g.positions,
            orientation_deg: g.orientation.to_degrees(),
        }
    }
}

/// Sampled transmit spectrum `S(f_n)`.
///
/// Sample `k` (0-based) sits at baseband frequency `(k - (N-1)/2) * delta`;
/// for even `N` the offsets are half-integer multiples of `delta`, which keeps
/// the frequency aperture symmetric about the center frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "SpectrumSpec", try_from = "SpectrumSpec")]
pub struct PulseSpectrum {
    samples: Vec<Complex64>,
    delta: f64,
    center_frequency: f64,
}

impl PulseSpectrum {
    pub fn from_samples(samples: Vec<Complex64>, delta: f64, center_frequency: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSpectrum("no samples".into()));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidSpectrum("frequency spacing must be positive".into()));
        }
        if !(center_frequency >= 0.0) || !center_frequency.is_finite() {
            return Err(Error::InvalidSpectrum("center frequency must be non-negative".into()));
        }
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::InvalidSpectrum("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            delta,
            center_frequency,
        })
    }

    /// Constant spectrum over the band, normalized to unit energy.
    pub fn flat(bandwidth: f64, center_frequency: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpectrum("no samples".into()));
        }
        let amp = (1.0 / n as f64).sqrt();
        Self::from_samples(vec![Complex64::new(amp, 0.0); n], bandwidth / n as f64, center_frequency)
    }

    /// Root-raised-cosine spectrum with total (two-sided) bandwidth
    /// `bandwidth = (1 + rolloff) / T_s`, normalized to unit energy.
    pub fn root_raised_cosine(
        rolloff: f64,
        bandwidth: f64,
        center_frequency: f64,
        n: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&rolloff) {
            return Err(Error::InvalidSpectrum("roll-off must lie in [0, 1]".into()));
        }
        if n == 0 || !(bandwidth > 0.0) {
            return Err(Error::InvalidSpectrum("bandwidth and sample count must be positive".into()));
        }
        let delta = bandwidth / n as f64;
        let symbol_rate = bandwidth / (1.0 + rolloff);
        let f1 = (1.0 - rolloff) * symbol_rate / 2.0;
        let f2 = (1.0 + rolloff) * symbol_rate / 2.0;
        let mut samples: Vec<Complex64> = (0..n)
            .map(|k| {
                let f = ((k as f64) - (n as f64 - 1.0) / 2.0) * delta;
                let af = f.abs();
                let h = if af <= f1 {
                    1.0
                } else if af <= f2 {
                    let arg = PI / (rolloff * symbol_rate) * (af - f1);
                    (0.5 * (1.0 + arg.cos())).sqrt()
                } else {
                    0.0
                };
                Complex64::new(h, 0.0)
            })
            .collect();
        let energy: f64 = samples.iter().map(|s| s.norm_sqr()).sum();
        if energy <= 0.0 {
            return Err(Error::InvalidSpectrum("spectrum has no energy".into()));
        }
        let scale = energy.sqrt().recip();
        samples.iter_mut().for_each(|s| *s *= scale);
        Self::from_samples(samples, delta, center_frequency)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn center_frequency(&self) -> f64 {
        self.center_frequency
    }

    pub fn bandwidth(&self) -> f64 {
        self.delta * self.samples.len() as f64
    }

    /// Frequency index of sample `k`, `k - (N-1)/2`.
    pub fn index(&self, k: usize) -> f64 {
        k as f64 - (self.samples.len() as f64 - 1.0) / 2.0
    }

    /// Baseband frequency of sample `k`, Hz.
    pub fn frequency(&self, k: usize) -> f64 {
        self.index(k) * self.delta
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Whether `J s_f = conj(s_f)` with `J` the exchange matrix.
    pub fn is_conjugate_symmetric(&self, tol: f64) -> bool {
        let n = self.samples.len();
        (0..n).all(|k| (self.samples[n - 1 - k] - self.samples[k].conj()).norm() <= tol)
    }

    /// Delay response `s_f(tau)` with entries `S(f_n) exp(-j 2 pi f_n tau)`.
    pub fn delay_response(&self, tau: f64) -> DVector<Complex64> {
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|k| self.samples[k] * Complex64::cis(-TAU * self.frequency(k) * tau)),
        )
    }

    /// Derivative of [`Self::delay_response`] with respect to `tau`.
    pub fn delay_response_derivative(&self, tau: f64) -> DVector<Complex64> {
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|k| {
                let f = self.frequency(k);
                Complex64::new(0.0, -TAU * f) * self.samples[k] * Complex64::cis(-TAU * f * tau)
            }),
        )
    }
}

/// Spectrum description used in configuration files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumSpec {
    RootRaisedCosine {
        rolloff: f64,
        bandwidth_hz: f64,
        center_frequency_hz: f64,
        samples: usize,
    },
    Flat {
        bandwidth_hz: f64,
        center_frequency_hz: f64,
        samples: usize,
    },
    Sampled {
        re: Vec<f64>,
        im: Vec<f64>,
        delta_hz: f64,
        center_frequency_hz: f64,
    },
}

impl TryFrom<SpectrumSpec> for PulseSpectrum {
    type Error = Error;

    fn try_from(spec: SpectrumSpec) -> Result<Self> {
        match spec {
            SpectrumSpec::RootRaisedCosine {
                rolloff,
                bandwidth_hz,
                center_frequency_hz,
                samples,
            } => PulseSpectrum::root_raised_cosine(rolloff, bandwidth_hz, center_frequency_hz, samples),
            SpectrumSpec::Flat {
                bandwidth_hz,
                center_frequency_hz,
                samples,
            } => PulseSpectrum::flat(bandwidth_hz, center_frequency_hz, samples),
            SpectrumSpec::Sampled {
                re,
                im,
                delta_hz,
                center_frequency_hz,
            } => {
                if re.len() != im.len() {
                    return Err(Error::InvalidSpectrum("re/im length mismatch".into()));
                }
                let samples = re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect();
                PulseSpectrum::from_samples(samples, delta_hz, center_frequency_hz)
            }
        }
    }
}

impl From<PulseSpectrum> for SpectrumSpec {
    fn from(s: PulseSpectrum) -> Self {
        SpectrumSpec::Sampled {
            re: s.samples.iter().map(|c| c.re).collect(),
            im: s.samples.iter().map(|c| c.im).collect(),
            delta_hz: s.delta,
            center_frequency_hz: s.center_frequency,
        }
    }
}

/// Point `psi = [tau, phi]` of the dispersion domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionVector {
    pub tau: f64,
    pub phi: f64,
}

impl DispersionVector {
    /// The angle is wrapped into `[-pi, pi)`.
    pub fn new(tau: f64, phi: f64) -> Self {
        Self {
            tau,
            phi: wrap_angle(phi),
        }
    }

    /// Propagation distance equivalent of the delay, meters.
    pub fn distance(&self) -> f64 {
        self.tau * SPEED_OF_LIGHT
    }
}

/// Support `[0, T) x [-pi, pi)` of the delay-angle spread function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionDomain {
    max_delay: f64,
}

impl DispersionDomain {
    /// `max_delay` must not exceed the unambiguous delay range `1/delta`.
    pub fn new(max_delay: f64, spectrum: &PulseSpectrum) -> Result<Self> {
        if !(max_delay > 0.0) || !max_delay.is_finite() {
            return Err(Error::InvalidParameter("maximum delay must be positive".into()));
        }
        let limit = 1.0 / spectrum.delta();
        if max_delay > limit * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "maximum delay {max_delay:e} s exceeds the aliasing-free range {limit:e} s"
            )));
        }
        Ok(Self {
            max_delay: max_delay.min(limit),
        })
    }

    /// Full unambiguous range `T = 1/delta`.
    pub fn unambiguous(spectrum: &PulseSpectrum) -> Self {
        Self {
            max_delay: 1.0 / spectrum.delta(),
        }
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay
    }

    pub fn contains(&self, psi: &DispersionVector) -> bool {
        psi.tau >= 0.0 && psi.tau < self.max_delay && (-PI..PI).contains(&psi.phi)
    }
}

/// Array plus spectrum: everything needed to evaluate steering vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteeringModel {
    pub geometry: ArrayGeometry,
    pub spectrum: PulseSpectrum,
    /// Keep the per-element envelope delay (wideband) or drop it (narrowband).
    pub wideband: bool,
}

impl SteeringModel {
    pub fn new(geometry: ArrayGeometry, spectrum: PulseSpectrum, wideband: bool) -> Self {
        Self {
            geometry,
            spectrum,
            wideband,
        }
    }

    pub fn with_wideband(&self, wideband: bool) -> Self {
        Self {
            wideband,
            ..self.clone()
        }
    }

    pub fn n_freq(&self) -> usize {
        self.spectrum.len()
    }

    pub fn n_ant(&self) -> usize {
        self.geometry.len()
    }

    /// Length `N * M` of a stacked observation.
    pub fn dim(&self) -> usize {
        self.n_freq() * self.n_ant()
    }

    /// Steering vector `s(psi)`, antenna-major (`m` outer, `n` inner).
    pub fn steering_vector(&self, psi: &DispersionVector) -> DVector<Complex64> {
        let mut out = DVector::zeros(self.dim());
        self.steering_into(psi, out.as_mut_slice());
        out
    }

    pub fn steering_into(&self, psi: &DispersionVector, out: &mut [Complex64]) {
        let n = self.n_freq();
        let fc = self.spectrum.center_frequency();
        for m in 0..self.n_ant() {
            let g = self.geometry.relative_delay(psi.phi, m);
            let envelope_delay = if self.wideband { psi.tau - g } else { psi.tau };
            let carrier = TAU * fc * g;
            for k in 0..n {
                let f = self.spectrum.frequency(k);
                out[m * n + k] = self.spectrum.samples[k] * Complex64::cis(carrier - TAU * f * envelope_delay);
            }
        }
    }

    /// Partial derivatives `(ds/dtau, ds/dphi)` of the steering vector.
    pub fn steering_jacobian(&self, psi: &DispersionVector) -> (DVector<Complex64>, DVector<Complex64>) {
        let mut s = DVector::zeros(self.dim());
        let mut dt = DVector::zeros(self.dim());
        let mut dp = DVector::zeros(self.dim());
        self.steering_with_jacobian(psi, s.as_mut_slice(), dt.as_mut_slice(), dp.as_mut_slice());
        (dt, dp)
    }

    /// Steering vector and both partial derivatives in one pass.
    pub fn steering_with_jacobian(
        &self,
        psi: &DispersionVector,
        s: &mut [Complex64],
        d_tau: &mut [Complex64],
        d_phi: &mut [Complex64],
    ) {
        let n = self.n_freq();
        let fc = self.spectrum.center_frequency();
        for m in 0..self.n_ant() {
            let g = self.geometry.relative_delay(psi.phi, m);
            let dg = self.geometry.relative_delay_derivative(psi.phi, m);
            let envelope_delay = if self.wideband { psi.tau - g } else { psi.tau };
            let carrier = TAU * fc * g;
            for k in 0..n {
                let f = self.spectrum.frequency(k);
                let v = self.spectrum.samples[k] * Complex64::cis(carrier - TAU * f * envelope_delay);
                let phase_rate = if self.wideband { fc + f } else { fc };
                let i = m * n + k;
                s[i] = v;
                d_tau[i] = Complex64::new(0.0, -TAU * f) * v;
                d_phi[i] = Complex64::new(0.0, TAU * phase_rate * dg) * v;
            }
        }
    }

    /// Envelope delay of element `m` seen by the delay response: `tau - g_m`
    /// (wideband) or `tau` (narrowband).
    pub fn envelope_delay(&self, psi: &DispersionVector, m: usize) -> f64 {
        if self.wideband {
            psi.tau - self.geometry.relative_delay(psi.phi, m)
        } else {
            psi.tau
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid3() -> ArrayGeometry {
        ArrayGeometry::uniform_rectangular(3, 3, 0.02, 0.0).unwrap()
    }

    fn rrc(n: usize) -> PulseSpectrum {
        PulseSpectrum::root_raised_cosine(0.6, 1.6e9, 6e9, n).unwrap()
    }

    #[test]
    fn relative_delay_examples() {
        let g = ArrayGeometry::new(vec![[0.03, 0.0], [-0.03, 0.0]], 0.0).unwrap();
        assert_relative_eq!(g.relative_delay(0.0, 0), 0.03 / SPEED_OF_LIGHT, max_relative = 1e-15);
        assert_relative_eq!(g.relative_delay(0.0, 0), 1.0007e-10, max_relative = 1e-4);
        assert!(g.relative_delay(PI / 2.0, 0).abs() < 1e-25);
    }

    #[test]
    fn centro_symmetric_delays_sum_to_zero() {
        let g = grid3();
        assert!(g.is_centro_symmetric());
        for phi in [-3.0, -1.1, 0.0, 0.4, 2.9] {
            let sum: f64 = (0..g.len()).map(|m| g.relative_delay(phi, m)).sum();
            assert!(sum.abs() < 1e-15);
        }
        let lopsided = ArrayGeometry::new(vec![[0.0, 0.0], [0.01, 0.0], [0.03, 0.0]], 0.0).unwrap();
        assert!(!lopsided.is_centro_symmetric());
    }

    #[test]
    fn center_of_gravity_matches_positions() {
        let g = ArrayGeometry::new(vec![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]], 0.3).unwrap();
        let c = g.center_of_gravity();
        assert!((c[0] - 1.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12);
        assert!(ArrayGeometry::new(vec![], 0.0).is_err());
    }

    #[test]
    fn single_element_at_zero_delay_returns_spectrum() {
        let g = ArrayGeometry::new(vec![[0.2, -0.1]], 0.0).unwrap();
        let spec = rrc(27);
        let model = SteeringModel::new(g, spec.clone(), true);
        let s = model.steering_vector(&DispersionVector::new(0.0, 1.2));
        for (a, b) in s.iter().zip(spec.samples()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_norm_is_constant() {
        let model = SteeringModel::new(grid3(), rrc(27), true);
        let expected = 9.0 * model.spectrum.energy();
        for (tau, phi) in [(0.0, 0.0), (3e-9, 1.0), (12e-9, -2.5)] {
            let s = model.steering_vector(&DispersionVector::new(tau, phi));
            assert_relative_eq!(s.norm_squared(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn wideband_and_narrowband_coincide_for_one_element() {
        let g = ArrayGeometry::new(vec![[0.0, 0.0]], 0.0).unwrap();
        let wb = SteeringModel::new(g.clone(), rrc(27), true);
        let nb = SteeringModel::new(g, rrc(27), false);
        let psi = DispersionVector::new(7e-9, 0.8);
        assert!((wb.steering_vector(&psi) - nb.steering_vector(&psi)).norm() < 1e-14);

        let wb = SteeringModel::new(grid3(), rrc(27), true);
        let nb = wb.with_wideband(false);
        assert!((wb.steering_vector(&psi) - nb.steering_vector(&psi)).norm() > 1e-3);
    }

    #[test]
    fn steering_is_two_pi_periodic_in_angle() {
        let model = SteeringModel::new(grid3(), rrc(27), true);
        let a = model.steering_vector(&DispersionVector { tau: 4e-9, phi: 0.7 });
        let b = model.steering_vector(&DispersionVector { tau: 4e-9, phi: 0.7 + TAU });
        assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn narrowband_delay_derivative_is_frequency_weighted() {
        let model = SteeringModel::new(grid3(), rrc(27), false);
        let psi = DispersionVector::new(5e-9, 0.3);
        let s = model.steering_vector(&psi);
        let (dt, _) = model.steering_jacobian(&psi);
        for m in 0..9 {
            for k in 0..27 {
                let expected = Complex64::new(0.0, -TAU * model.spectrum.frequency(k)) * s[m * 27 + k];
                assert!((dt[m * 27 + k] - expected).norm() < 1e-6 * expected.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn single_element_has_no_angular_derivative() {
        let g = ArrayGeometry::new(vec![[0.0, 0.0]], 0.0).unwrap();
        let model = SteeringModel::new(g, rrc(27), true);
        let (_, dp) = model.steering_jacobian(&DispersionVector::new(5e-9, 0.3));
        assert_eq!(dp.norm(), 0.0);
    }

    #[test]
    fn conjugate_symmetry_of_rrc_spectrum() {
        assert!(rrc(27).is_conjugate_symmetric(1e-14));
        assert!(rrc(54).is_conjugate_symmetric(1e-14));
        let s = PulseSpectrum::from_samples(
            vec![Complex64::new(1.0, 0.5), Complex64::new(1.0, 0.0)],
            1.0,
            0.0,
        )
        .unwrap();
        assert!(!s.is_conjugate_symmetric(1e-9));
    }

    #[test]
    fn rrc_is_unit_energy_and_has_expected_band_edges() {
        let s = rrc(54);
        assert_relative_eq!(s.energy(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(s.bandwidth(), 1.6e9, max_relative = 1e-14);
        // passband is flat up to (1 - rolloff) / (2 T_s) = 200 MHz
        let mid = s.samples()[27].re;
        assert_relative_eq!(s.samples()[28].re, mid, max_relative = 1e-14);
    }

    #[test]
    fn domain_enforces_aliasing_free_range() {
        let s = rrc(27);
        assert!(DispersionDomain::new(1.0 / s.delta(), &s).is_ok());
        assert!(DispersionDomain::new(1.1 / s.delta(), &s).is_err());
        let d = DispersionDomain::unambiguous(&s);
        assert!(d.contains(&DispersionVector::new(0.0, -PI)));
        assert!(!d.contains(&DispersionVector::new(d.max_delay(), 0.0)));
    }

    #[test]
    fn wrap_angle_range() {
        for phi in [-10.0, -PI, 0.0, PI, 7.5, 1e3] {
            let w = wrap_angle(phi);
            assert!((-PI..PI).contains(&w));
            assert!(((w - phi) / TAU - ((w - phi) / TAU).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn config_round_trip() {
        let g = ArrayGeometry::uniform_rectangular(2, 5, 0.02, 0.1).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: ArrayGeometry = serde_json::from_str(&json).unwrap();
        assert_eq!(back.len(), 10);
        let spec = rrc(27);
        let back: PulseSpectrum = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let parsed: ArrayGeometry =
            serde_json::from_str(r#"{"kind":"rectangular","rows":3,"cols":3,"spacing_m":0.02}"#).unwrap();
        assert_eq!(parsed.len(), 9);
    }
}
