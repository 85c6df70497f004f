//! Synthetic observations `y = S(psi) alpha + v + w`.
//!
//! Every trial draws from its own ChaCha20 stream (`seed`, stream `trial`),
//! so a trial is reproducible regardless of which other trials ran.

use std::f64::consts::{PI, TAU};

use log::debug;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::ModelContext;
use crate::model::{DispersionVector, SPEED_OF_LIGHT};
use crate::noise::{
    build_full_dmc_covariance, cholesky_with_jitter, delay_correlation, uniform_aps, DmcParams, GammaDps,
    DEFAULT_DIMENSION_CAP,
};

/// How the dense multipath part is generated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Independent antennas, each with covariance `P Q_f`.
    #[default]
    Kronecker,
    /// Full wideband covariance with a uniform angular spectrum.
    FullWideband,
    /// No dense multipath.
    AwgnOnly,
}

/// Spacing of the second component in a controlled pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    /// Distance offset in meters.
    Distance(f64),
    /// Angle offset, degrees in files.
    Angle(#[serde(with = "crate::degrees")] f64),
}

/// A fully specified component. Angles in degrees in files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedComponent {
    pub tau_s: f64,
    #[serde(rename = "phi_deg", with = "crate::degrees")]
    pub phi: f64,
    #[serde(default = "one")]
    pub amp_re: f64,
    #[serde(default)]
    pub amp_im: f64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Placement rule for the specular components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Placement {
    /// Given components; amplitudes as listed unless `random_phase` is set.
    Fixed { components: Vec<FixedComponent> },
    /// `count` components uniform over the domain; either coordinate may be pinned.
    Random {
        count: usize,
        #[serde(default)]
        tau_s: Option<f64>,
        #[serde(default, rename = "phi_deg", with = "crate::degrees::option")]
        phi: Option<f64>,
    },
    /// First component uniform, second offset by `spacing`.
    Pair { spacing: Spacing },
}

/// Scenario of a Monte-Carlo study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub placement: Placement,
    /// Magnitude of random-placement amplitudes.
    #[serde(default = "one")]
    pub magnitude: f64,
    /// Draw amplitude phases uniformly on `[0, 2 pi)`.
    #[serde(default = "yes")]
    pub random_phase: bool,
    pub snr_db: f64,
    /// Specular-to-dense ratio; `None` means no dense part.
    #[serde(default)]
    pub sdr_db: Option<f64>,
    /// Explicit DMC power, used when there is no specular energy to refer to.
    #[serde(default)]
    pub dmc_power: Option<f64>,
    #[serde(default)]
    pub mode: GenerationMode,
    #[serde(default)]
    pub seed: u64,
    /// Range of delays used by random placement; defaults to the full domain.
    #[serde(default)]
    pub delay_range_s: Option<[f64; 2]>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        if let Some(s) = self.sdr_db {
            if !s.is_finite() {
                return Err(Error::Config("sdr_db must be finite; omit it for no dense part".into()));
            }
        }
        if !(self.magnitude > 0.0) {
            return Err(Error::Config("magnitude must be positive".into()));
        }
        if let Some([a, b]) = self.delay_range_s {
            if !(a >= 0.0 && b > a) {
                return Err(Error::Config("delay_range_s must satisfy 0 <= lo < hi".into()));
            }
        }
        Ok(())
    }

    fn uses_dense(&self) -> bool {
        self.mode != GenerationMode::AwgnOnly && (self.sdr_db.is_some() || self.dmc_power.is_some_and(|p| p > 0.0))
    }
}

/// Realized ground truth of a trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub components: Vec<FixedComponent>,
    pub sigma2: f64,
    pub dmc_power: f64,
}

impl Truth {
    pub fn dispersion(&self) -> Vec<DispersionVector> {
        self.components.iter().map(|c| DispersionVector::new(c.tau_s, c.phi)).collect()
    }

    pub fn amplitudes(&self) -> Vec<Complex64> {
        self.components.iter().map(|c| Complex64::new(c.amp_re, c.amp_im)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticObservation {
    pub y: DVector<Complex64>,
    pub truth: Truth,
    pub seed: u64,
    pub trial: u64,
}

/// `(sigma2, P)` reproducing the requested SNR and SDR.
///
/// `specular` is `(1/M) ||sum_k alpha_k s(psi_k)||^2` and `energy` is
/// `sum_n |S_n|^2`, the dense-part power per antenna for `P = 1`.
pub fn resolve_powers(spec: &ScenarioSpec, specular: f64, energy: f64) -> Result<(f64, f64)> {
    let dense_energy = if !spec.uses_dense() {
        0.0
    } else if let Some(sdr) = spec.sdr_db.filter(|_| specular > 0.0) {
        specular / 10f64.powf(sdr / 10.0)
    } else if let Some(p) = spec.dmc_power {
        p * energy
    } else {
        return Err(Error::Config(
            "without specular components the DMC power must be given explicitly".into(),
        ));
    };
    let total = specular + dense_energy;
    if !(total > 0.0) {
        return Err(Error::Config("scenario has neither specular nor dense power; SNR undefined".into()));
    }
    let sigma2 = total / 10f64.powf(spec.snr_db / 10.0);
    Ok((sigma2, dense_energy / energy))
}

/// `(SNR, SDR)` in dB for given powers, the inverse of [`resolve_powers`].
pub fn power_ratios(specular: f64, energy: f64, sigma2: f64, dmc_power: f64) -> (f64, f64) {
    let dense = dmc_power * energy;
    (10.0 * ((specular + dense) / sigma2).log10(), 10.0 * (specular / dense).log10())
}

fn uniform_phase(rng: &mut ChaCha20Rng) -> Complex64 {
    Complex64::cis(TAU * rng.random::<f64>())
}

/// Realizes the placement rule. Delays are drawn from `[lo, hi)`.
pub fn place_components(
    spec: &ScenarioSpec,
    delay_range: [f64; 2],
    rng: &mut ChaCha20Rng,
) -> Result<Vec<(Complex64, DispersionVector)>> {
    let [lo, hi] = delay_range;
    let amp = |rng: &mut ChaCha20Rng| {
        if spec.random_phase {
            uniform_phase(rng) * spec.magnitude
        } else {
            Complex64::new(spec.magnitude, 0.0)
        }
    };
    let draw_psi = |rng: &mut ChaCha20Rng| DispersionVector::new(lo + (hi - lo) * rng.random::<f64>(), PI * (2.0 * rng.random::<f64>() - 1.0));
    match &spec.placement {
        Placement::Fixed { components } => Ok(components
            .iter()
            .map(|c| {
                let a = Complex64::new(c.amp_re, c.amp_im);
                let a = if spec.random_phase { uniform_phase(rng) * a.norm() } else { a };
                (a, DispersionVector::new(c.tau_s, c.phi))
            })
            .collect()),
        Placement::Random { count, tau_s, phi } => Ok((0..*count)
            .map(|_| {
                let mut psi = draw_psi(rng);
                if let Some(t) = tau_s {
                    psi.tau = *t;
                }
                if let Some(p) = phi {
                    psi = DispersionVector::new(psi.tau, *p);
                }
                (amp(rng), psi)
            })
            .collect()),
        Placement::Pair { spacing } => {
            for _ in 0..100 {
                let first = draw_psi(rng);
                let second = match spacing {
                    Spacing::Distance(d) => DispersionVector::new(first.tau + d / SPEED_OF_LIGHT, first.phi),
                    Spacing::Angle(a) => DispersionVector::new(first.tau, first.phi + a),
                };
                if second.tau >= lo && second.tau < hi {
                    let a1 = amp(rng);
                    let a2 = amp(rng);
                    return Ok(vec![(a1, first), (a2, second)]);
                }
            }
            Err(Error::SpacingOutOfDomain(format!("no valid pair after 100 draws with {spacing:?}")))
        }
    }
}

/// Draws observations for one scenario on one model.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub spec: ScenarioSpec,
    pub ctx: ModelContext,
    /// Delay power spectrum shape; the power comes from the scenario.
    pub dps: Option<GammaDps>,
    /// Unit-power colouring factor, per antenna (`N x N`) or full (`NM x NM`).
    factor: Option<DMatrix<Complex64>>,
    delay_range: [f64; 2],
}

impl Simulator {
    /// `dmc` supplies the shape `(beta, theta, xi)` of the delay power spectrum.
    /// The full-wideband mode always uses the wideband steering model.
    pub fn new(spec: ScenarioSpec, ctx: ModelContext, dmc: &DmcParams) -> Result<Self> {
        spec.validate()?;
        let delay_range = spec.delay_range_s.unwrap_or([0.0, ctx.domain.max_delay()]);
        if delay_range[1] > ctx.domain.max_delay() * (1.0 + 1e-12) {
            return Err(Error::Config("delay_range_s exceeds the unambiguous delay range".into()));
        }
        let (dps, factor) = if spec.uses_dense() {
            let dps = dmc.dps(&ctx.domain)?;
            let cov = match spec.mode {
                GenerationMode::Kronecker => delay_correlation(&ctx.model.spectrum, &dps)?,
                GenerationMode::FullWideband => build_full_dmc_covariance(
                    &ctx.model.with_wideband(true),
                    &dps,
                    &uniform_aps,
                    1.0,
                    0.0,
                    DEFAULT_DIMENSION_CAP,
                )?,
                GenerationMode::AwgnOnly => unreachable!(),
            };
            (Some(dps), Some(cholesky_with_jitter(&cov)?))
        } else {
            (None, None)
        };
        debug!("simulator ready: mode {:?}, dense part {}", spec.mode, factor.is_some());
        Ok(Self {
            spec,
            ctx,
            dps,
            factor,
            delay_range,
        })
    }

    /// Noise parameters of a trial in the estimator's parametrization.
    pub fn eta(&self, truth: &Truth) -> DmcParams {
        match self.dps {
            Some(d) => DmcParams {
                sigma2: truth.sigma2,
                dmc_power: truth.dmc_power,
                beta: d.beta(),
                theta: d.theta(),
                xi: d.xi(),
            },
            None => DmcParams::white(truth.sigma2),
        }
    }

    pub fn draw_observation(&self, trial: u64) -> Result<SyntheticObservation> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(trial);
        let model = &self.ctx.model;
        let comps = place_components(&self.spec, self.delay_range, &mut rng)?;
        let mut y = DVector::<Complex64>::zeros(model.dim());
        for (a, psi) in &comps {
            y += model.steering_vector(psi) * *a;
        }
        let specular = y.norm_squared() / model.n_ant() as f64;
        let (sigma2, dmc_power) = resolve_powers(&self.spec, specular, model.spectrum.energy())?;

        if let Some(l) = &self.factor {
            let scale = dmc_power.sqrt();
            if dmc_power > 0.0 {
                let k = l.nrows();
                for block in 0..model.dim() / k {
                    let z = complex_normal(&mut rng, k, 1.0);
                    let v = l * z * Complex64::from(scale);
                    let mut rows = y.rows_mut(block * k, k);
                    rows += &v;
                }
            }
        }
        y += complex_normal(&mut rng, model.dim(), sigma2);

        let components = comps
            .iter()
            .map(|(a, psi)| FixedComponent {
                tau_s: psi.tau,
                phi: psi.phi,
                amp_re: a.re,
                amp_im: a.im,
            })
            .collect();
        Ok(SyntheticObservation {
            y,
            truth: Truth {
                components,
                sigma2,
                dmc_power,
            },
            seed: self.spec.seed,
            trial,
        })
    }
}

/// Circularly symmetric complex Gaussian vector with per-entry variance `var`.
pub fn complex_normal(rng: &mut ChaCha20Rng, len: usize, var: f64) -> DVector<Complex64> {
    let s = (var / 2.0).sqrt();
    DVector::from_fn(len, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * s, im * s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrayGeometry, PulseSpectrum, SteeringModel};
    use crate::noise::{build_structured_covariance, eigen_range};

    fn ctx(rows: usize, cols: usize, n: usize) -> ModelContext {
        ModelContext::unambiguous(SteeringModel::new(
            ArrayGeometry::uniform_rectangular(rows, cols, 0.02, 0.0).unwrap(),
            PulseSpectrum::root_raised_cosine(0.6, 1.6e9, 6e9, n).unwrap(),
            true,
        ))
    }

    fn reference_dmc() -> DmcParams {
        DmcParams {
            sigma2: 1.0,
            dmc_power: 1.0,
            beta: 1.0 / SPEED_OF_LIGHT,
            theta: 5e-9,
            xi: 1.8,
        }
    }

    fn spec(placement: Placement, sdr: Option<f64>, mode: GenerationMode) -> ScenarioSpec {
        ScenarioSpec {
            placement,
            magnitude: 1.0,
            random_phase: true,
            snr_db: 20.0,
            sdr_db: sdr,
            dmc_power: None,
            mode,
            seed: 17,
            delay_range_s: None,
        }
    }

    fn sample_covariance(draws: &[DVector<Complex64>]) -> DMatrix<Complex64> {
        let d = draws[0].len();
        let mut c = DMatrix::zeros(d, d);
        for y in draws {
            c.ger(Complex64::from(1.0), y, &y.conjugate(), Complex64::from(1.0));
        }
        c / Complex64::from(draws.len() as f64)
    }

    fn op_norm(m: &DMatrix<Complex64>) -> f64 {
        let (lo, hi) = eigen_range(m);
        lo.abs().max(hi.abs())
    }

    #[test]
    fn powers_round_trip() {
        let s = spec(Placement::Random { count: 1, tau_s: None, phi: None }, Some(-5.0), GenerationMode::Kronecker);
        for specular in [0.3, 1.0, 7.5] {
            let (sigma2, p) = resolve_powers(&s, specular, 1.0).unwrap();
            let (snr, sdr) = power_ratios(specular, 1.0, sigma2, p);
            assert!((snr - 20.0).abs() < 1e-10 && (sdr + 5.0).abs() < 1e-10);
        }
        // unit-energy spectrum, |alpha| = 1: P = 10^0.5, sigma2 = (1 + P) / 100
        let (sigma2, p) = resolve_powers(&s, 1.0, 1.0).unwrap();
        assert!((p - 3.1622776601683795).abs() < 1e-12);
        assert!((sigma2 - 0.041622776601683794).abs() < 1e-14);
    }

    #[test]
    fn awgn_only_has_no_dense_power() {
        let s = spec(Placement::Random { count: 1, tau_s: None, phi: None }, Some(-5.0), GenerationMode::AwgnOnly);
        assert_eq!(resolve_powers(&s, 1.0, 1.0).unwrap().1, 0.0);
        let s = spec(Placement::Random { count: 0, tau_s: None, phi: None }, Some(-5.0), GenerationMode::Kronecker);
        assert!(resolve_powers(&s, 0.0, 1.0).is_err());
    }

    #[test]
    fn white_noise_sample_covariance() {
        let c = ModelContext::unambiguous(SteeringModel::new(
            ArrayGeometry::uniform_linear(2, 0.02, 0.0).unwrap(),
            PulseSpectrum::flat(1e9, 6e9, 2).unwrap(),
            true,
        ));
        // unit-energy spectrum and |alpha| = 1 at 0 dB SNR gives sigma2 = 1
        let mut s = spec(Placement::Random { count: 1, tau_s: None, phi: None }, None, GenerationMode::AwgnOnly);
        s.snr_db = 0.0;
        let sim = Simulator::new(s, c.clone(), &reference_dmc()).unwrap();
        let draws: Vec<_> = (0..10_000)
            .map(|t| {
                let o = sim.draw_observation(t).unwrap();
                assert!((o.truth.sigma2 - 1.0).abs() < 1e-12);
                assert_eq!(o.truth.dmc_power, 0.0);
                let psi = o.truth.dispersion()[0];
                o.y - c.model.steering_vector(&psi) * o.truth.amplitudes()[0]
            })
            .collect();
        let err = op_norm(&(sample_covariance(&draws) - DMatrix::identity(4, 4)));
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn kronecker_noise_matches_theory() {
        let c = ctx(1, 2, 8);
        let mut s = spec(Placement::Random { count: 0, tau_s: None, phi: None }, None, GenerationMode::Kronecker);
        s.dmc_power = Some(2.0);
        s.snr_db = 3.0;
        let sim = Simulator::new(s, c.clone(), &reference_dmc()).unwrap();
        let trials = 10_000;
        let obs: Vec<_> = (0..trials).map(|t| sim.draw_observation(t).unwrap()).collect();
        let truth = &obs[0].truth;
        let eta = sim.eta(truth);
        let theory = build_structured_covariance(&eta, &c.model.spectrum, 2, &c.domain).unwrap().to_dense();
        let draws: Vec<_> = obs.iter().map(|o| o.y.clone()).collect();
        let sample = sample_covariance(&draws);
        assert!(op_norm(&(&sample - &theory)) < 0.05 * op_norm(&theory));
        let bound = 3.0 / (trials as f64).sqrt();
        for i in 0..8 {
            for j in 8..16 {
                let r = sample[(i, j)].norm() / (theory[(i, i)].re * theory[(j, j)].re).sqrt();
                assert!(r < bound, "{i} {j} {r}");
            }
        }
    }
    #[test]
    fn trials_are_reproducible_and_independent_of_order() {
        let c = ctx(2, 2, 27);
        let s = spec(Placement::Random { count: 2, tau_s: None, phi: None }, Some(0.0), GenerationMode::Kronecker);
        let sim = Simulator::new(s, c, &reference_dmc()).unwrap();
        let a = sim.draw_observation(5).unwrap();
        let _ = sim.draw_observation(6).unwrap();
        let b = sim.draw_observation(5).unwrap();
        assert_eq!(a.truth, b.truth);
        assert!(a.y.iter().zip(b.y.iter()).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        assert_ne!(a.y, sim.draw_observation(7).unwrap().y);
    }

    #[test]
    fn single_component_powers_match_reference() {
        let c = ctx(3, 3, 27);
        let s = spec(Placement::Random { count: 1, tau_s: Some(10e-9), phi: None }, Some(-5.0), GenerationMode::Kronecker);
        let sim = Simulator::new(s, c.clone(), &reference_dmc()).unwrap();
        let o = sim.draw_observation(0).unwrap();
        let psi = o.truth.dispersion()[0];
        let alpha = o.truth.amplitudes()[0];
        assert_eq!(psi.tau, 10e-9);
        let specular = (c.model.steering_vector(&psi) * alpha).norm_squared() / 9.0;
        let (snr, sdr) = power_ratios(specular, c.model.spectrum.energy(), o.truth.sigma2, o.truth.dmc_power);
        assert!((snr - 20.0).abs() < 1e-10 && (sdr + 5.0).abs() < 1e-10);
    }

    #[test]
    fn pair_spacing_rules() {
        let range = [0.0, 30e-9];
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let s = spec(Placement::Pair { spacing: Spacing::Distance(0.0) }, None, GenerationMode::AwgnOnly);
        let p = place_components(&s, range, &mut rng).unwrap();
        assert_eq!(p[0].1, p[1].1);
        let s = spec(Placement::Pair { spacing: Spacing::Angle(0.3) }, None, GenerationMode::AwgnOnly);
        let p = place_components(&s, range, &mut rng).unwrap();
        assert_eq!(p[0].1.tau, p[1].1.tau);
        assert!((wrap(p[1].1.phi - p[0].1.phi) - 0.3).abs() < 1e-12);
        assert!((p[0].0.norm() - 1.0).abs() < 1e-12);
        let s = spec(Placement::Pair { spacing: Spacing::Distance(20.0) }, None, GenerationMode::AwgnOnly);
        assert!(matches!(place_components(&s, range, &mut rng), Err(Error::SpacingOutOfDomain(_))));
    }

    fn wrap(x: f64) -> f64 {
        crate::model::wrap_angle(x)
    }

    /// Kolmogorov–Smirnov distance of a sample from the uniform law on `[0, 1)`.
    fn ks_uniform(mut u: Vec<f64>) -> f64 {
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        u.iter()
            .enumerate()
            .map(|(i, x)| (x - i as f64 / n).max((i as f64 + 1.0) / n - x))
            .fold(0.0, f64::max)
    }

    #[test]
    fn uniform_placement_passes_ks() {
        let range = [0.0, 30e-9];
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let s = spec(Placement::Random { count: 1, tau_s: None, phi: None }, None, GenerationMode::AwgnOnly);
        let draws: Vec<_> = (0..10_000).map(|_| place_components(&s, range, &mut rng).unwrap()[0]).collect();
        let crit = 1.628 / 100.0;
        assert!(ks_uniform(draws.iter().map(|d| d.1.tau / 30e-9).collect()) < crit);
        assert!(ks_uniform(draws.iter().map(|d| (d.1.phi + PI) / TAU).collect()) < crit);
        assert!(ks_uniform(draws.iter().map(|d| (d.0.arg() + PI) / TAU).collect()) < crit);
    }

    #[test]
    fn full_wideband_differs_from_kronecker() {
        let c = ctx(3, 3, 27);
        let dps = reference_dmc().dps(&c.domain).unwrap();
        let full = build_full_dmc_covariance(&c.model, &dps, &uniform_aps, 1.0, 0.0, 4096).unwrap();
        let q_f = delay_correlation(&c.model.spectrum, &dps).unwrap();
        let n = 27;
        let kron = DMatrix::from_fn(n * 9, n * 9, |i, j| if i / n == j / n { q_f[(i % n, j % n)] } else { Complex64::from(0.0) });
        let gap = (&full - &kron).norm();
        assert!(gap > 1e-3 * kron.norm(), "{gap}");
        let mut s = spec(Placement::Random { count: 1, tau_s: None, phi: None }, Some(0.0), GenerationMode::FullWideband);
        s.seed = 2;
        let sim = Simulator::new(s, c, &reference_dmc()).unwrap();
        assert!(sim.draw_observation(0).unwrap().y.iter().all(|v| v.re.is_finite()));
    }
}
