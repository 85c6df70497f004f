//! Grid search for new components and local refinement of dispersion points.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::{DVector, Matrix2, Vector2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::objective::{Problem, Residual, Stat};
use crate::model::{wrap_angle, DispersionDomain, DispersionVector, SteeringModel, SPEED_OF_LIGHT};

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Densities of the candidate grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Delay samples per resolution cell `1/B`; at least 2.
    pub delay_oversampling: usize,
    /// Angle samples per `2 pi / (8 span_in_wavelengths)`.
    pub angle_oversampling: f64,
    /// Number of grid peaks handed to local refinement.
    pub refine_peaks: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            delay_oversampling: 4,
            angle_oversampling: 2.0,
            refine_peaks: 3,
        }
    }
}

/// Local refinement settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub max_iterations: usize,
    /// Relative change of the statistic below which Newton steps stop.
    pub tolerance: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-12,
        }
    }
}

/// Precomputed delay-angle grid.
pub struct SearchGrid {
    n_freq: usize,
    n_fft: usize,
    n_tau: usize,
    tau_step: f64,
    phis: Vec<f64>,
    /// `conj(base_{m,n}(phi))` per angle, antenna-major.
    base: Vec<DVector<Complex64>>,
    /// `E_k(phi)`, `k = -(N-1)..=(N-1)`, per angle.
    ek: Vec<Vec<Complex64>>,
    fft: Arc<dyn Fft<f64>>,
    fix_phi: bool,
}

impl std::fmt::Debug for SearchGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SearchGrid")
            .field("n_tau", &self.n_tau)
            .field("n_phi", &self.phis.len())
            .field("tau_step", &self.tau_step)
            .finish()
    }
}

/// True if the angle of arrival has no effect on the steering vector.
pub fn angle_unidentifiable(model: &SteeringModel) -> bool {
    model.geometry.span() == 0.0
}

impl SearchGrid {
    pub fn new(model: &SteeringModel, domain: &DispersionDomain, cfg: &GridConfig) -> Self {
        let n = model.n_freq();
        let m = model.n_ant();
        let r = cfg.delay_oversampling.max(2);
        let n_fft = r * n;
        let delta = model.spectrum.delta();
        let tau_step = 1.0 / (n_fft as f64 * delta);
        let n_tau = ((domain.max_delay() / tau_step).ceil() as usize).clamp(1, n_fft);
        let fix_phi = angle_unidentifiable(model);
        let phis: Vec<f64> = if fix_phi {
            vec![0.0]
        } else {
            let fmax = model.spectrum.center_frequency() + 0.5 * model.spectrum.bandwidth();
            let span_lambda = model.geometry.span() * fmax / SPEED_OF_LIGHT;
            let count = (8.0 * span_lambda * cfg.angle_oversampling).ceil().max(16.0) as usize;
            (0..count).map(|k| -PI + TAU * k as f64 / count as f64).collect()
        };
        let fc = model.spectrum.center_frequency();
        let samples = model.spectrum.samples();
        let mut base = Vec::with_capacity(phis.len());
        let mut ek = Vec::with_capacity(phis.len());
        for &phi in &phis {
            let mut b = DVector::zeros(n * m);
            let mut e = vec![Complex64::new(0.0, 0.0); 2 * n - 1];
            for a in 0..m {
                let g = model.geometry.relative_delay(phi, a);
                for k in 0..n {
                    let env = if model.wideband { model.spectrum.frequency(k) * g } else { 0.0 };
                    b[a * n + k] = (samples[k] * Complex64::cis(TAU * (fc * g + env))).conj();
                }
                for (i, ei) in e.iter_mut().enumerate() {
                    let k = i as f64 - (n as f64 - 1.0);
                    *ei += if model.wideband {
                        Complex64::cis(-TAU * k * delta * g)
                    } else {
                        Complex64::new(1.0, 0.0)
                    };
                }
            }
            base.push(b);
            ek.push(e);
        }
        let fft = FftPlanner::new().plan_fft_inverse(n_fft);
        Self {
            n_freq: n,
            n_fft,
            n_tau,
            tau_step,
            phis,
            base,
            ek,
            fft,
            fix_phi,
        }
    }

    pub fn tau_step(&self) -> f64 {
        self.tau_step
    }

    pub fn phi_step(&self) -> f64 {
        if self.fix_phi {
            0.0
        } else {
            TAU / self.phis.len() as f64
        }
    }

    pub fn fixes_angle(&self) -> bool {
        self.fix_phi
    }

    pub fn size(&self) -> (usize, usize) {
        (self.n_tau, self.phis.len())
    }

    /// `s(tau_i, phi_j)^H w` for all delays of angle `j`.
    fn correlate(&self, j: usize, w: &DVector<Complex64>, scratch: &mut [Complex64], out: &mut Vec<Complex64>) {
        let n = self.n_freq;
        let m = w.len() / n;
        scratch.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        let b = &self.base[j];
        for a in 0..m {
            for k in 0..n {
                scratch[k] += b[a * n + k] * w[a * n + k];
            }
        }
        self.fft.process(scratch);
        let c = (n as f64 - 1.0) / 2.0;
        out.clear();
        out.extend((0..self.n_tau).map(|i| Complex64::cis(-TAU * c * i as f64 / self.n_fft as f64) * scratch[i]));
    }

    /// `s^H Q^-1 s` on the delay grid of angle `j`.
    fn energy(&self, j: usize, coeffs: &[Complex64], scratch: &mut [Complex64], out: &mut Vec<f64>) {
        let n = self.n_freq;
        scratch.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (i, (c, e)) in coeffs.iter().zip(&self.ek[j]).enumerate() {
            let k = i as isize - (n as isize - 1);
            let idx = k.rem_euclid(self.n_fft as isize) as usize;
            scratch[idx] += c * e;
        }
        self.fft.process(scratch);
        out.clear();
        out.extend(scratch[..self.n_tau].iter().map(|z| z.re));
    }

    /// Statistic `t` on the whole grid, indexed `[j][i]` (angle, delay).
    pub fn evaluate(&self, prob: &Problem, res: &Residual) -> Vec<Vec<f64>> {
        let coeffs = prob.noise.coefficients();
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut u = Vec::new();
        let mut h = Vec::new();
        let k = res.w.len();
        let mut others: Vec<Vec<Complex64>> = vec![Vec::new(); k];
        let mut field = Vec::with_capacity(self.phis.len());
        for j in 0..self.phis.len() {
            self.correlate(j, &res.x, &mut scratch, &mut u);
            for (o, w) in others.iter_mut().zip(&res.w) {
                self.correlate(j, w, &mut scratch, o);
            }
            self.energy(j, coeffs, &mut scratch, &mut h);
            let row: Vec<f64> = (0..self.n_tau)
                .map(|i| {
                    let mut v = h[i];
                    if k > 0 {
                        // c = W^H s = conj(s^H W)
                        let c = DVector::from_iterator(k, others.iter().map(|o| o[i].conj()));
                        v -= c.dotc(&(&res.sigma * &c)).re;
                    }
                    if v > 0.0 {
                        u[i].norm_sqr() / v
                    } else {
                        0.0
                    }
                })
                .collect();
            field.push(row);
        }
        field
    }

    /// Grid local maxima sorted by decreasing statistic (ties: smaller delay first).
    pub fn peaks(&self, field: &[Vec<f64>], count: usize) -> Vec<(DispersionVector, f64)> {
        let np = field.len();
        let nt = self.n_tau;
        let mut peaks = Vec::new();
        for j in 0..np {
            for i in 0..nt {
                let t = field[j][i];
                let mut is_peak = t > 0.0;
                'nb: for dj in [-1isize, 0, 1] {
                    for di in [-1isize, 0, 1] {
                        if (dj == 0 && di == 0) || !is_peak {
                            continue;
                        }
                        let ii = i as isize + di;
                        if ii < 0 || ii >= nt as isize {
                            continue;
                        }
                        if np == 1 && dj != 0 {
                            continue;
                        }
                        let jj = (j as isize + dj).rem_euclid(np as isize) as usize;
                        let other = field[jj][ii as usize];
                        // strict on one side so plateaus yield a single peak
                        let before = (dj, di) < (0, 0);
                        if other > t || (before && other == t) {
                            is_peak = false;
                            break 'nb;
                        }
                    }
                }
                if is_peak {
                    peaks.push((DispersionVector::new(i as f64 * self.tau_step, self.phis[j]), t));
                }
            }
        }
        peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.tau.total_cmp(&b.0.tau)));
        peaks.truncate(count);
        peaks
    }
}

/// Maximizes the statistic over the delay-angle grid and refines the best
/// grid peaks. Returns `None` when the field is identically zero.
pub fn candidate_search(
    prob: &Problem,
    res: &Residual,
    grid: &SearchGrid,
    grid_cfg: &GridConfig,
    refine_cfg: &RefineConfig,
) -> Option<(DispersionVector, Stat)> {
    let field = grid.evaluate(prob, res);
    let peaks = grid.peaks(&field, grid_cfg.refine_peaks.max(1));
    let steps = [grid.tau_step(), grid.phi_step()];
    let mut best: Option<(DispersionVector, Stat)> = None;
    for (psi, _) in peaks {
        let (p, st) = refine(prob, res, psi, steps, grid.fixes_angle(), refine_cfg);
        let better = match &best {
            None => true,
            Some((bp, bs)) => st.t > bs.t || (st.t == bs.t && p.tau < bp.tau),
        };
        if better {
            best = Some((p, st));
        }
    }
    best
}

fn clamp_tau(tau: f64, max_delay: f64) -> f64 {
    tau.clamp(0.0, max_delay * (1.0 - 1e-12))
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> (f64, f64) {
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iterations {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Locally maximizes the statistic around `psi0`: golden-section searches on
/// delay then angle within one grid step, followed by Newton steps with an
/// analytic gradient and a finite-difference Hessian. Never returns a point
/// with a smaller statistic than `psi0`.
pub fn refine(
    prob: &Problem,
    res: &Residual,
    psi0: DispersionVector,
    steps: [f64; 2],
    fix_phi: bool,
    cfg: &RefineConfig,
) -> (DispersionVector, Stat) {
    let t_max = prob.ctx.domain.max_delay();
    let eval = |p: &DispersionVector| res.stat(prob, p);
    let mut psi = DispersionVector::new(clamp_tau(psi0.tau, t_max), psi0.phi);
    let mut best = eval(&psi);
    let start = (psi, best);

    // coordinate golden sections
    let (a, b) = (clamp_tau(psi.tau - steps[0], t_max), clamp_tau(psi.tau + steps[0], t_max));
    let phi = psi.phi;
    let (tau, t) = golden_max(&|x| eval(&DispersionVector { tau: x, phi }).t, a, b, 24);
    if t > best.t {
        psi.tau = tau;
        best = eval(&psi);
    }
    if !fix_phi && steps[1] > 0.0 {
        let tau = psi.tau;
        let (p, t) = golden_max(
            &|x| eval(&DispersionVector { tau, phi: x }).t,
            psi.phi - steps[1],
            psi.phi + steps[1],
            24,
        );
        if t > best.t {
            psi = DispersionVector::new(tau, p);
            best = eval(&psi);
        }
    }

    // Newton polish
    let h = [steps[0].max(1e-15) * 1e-4, steps[1].max(1e-9) * 1e-4];
    for _ in 0..cfg.max_iterations {
        let (_, g) = res.stat_with_gradient(prob, &psi);
        let grad_at = |p: DispersionVector| res.stat_with_gradient(prob, &p).1;
        let step: Vector2<f64> = if fix_phi {
            let gp = grad_at(DispersionVector { tau: psi.tau + h[0], ..psi });
            let gm = grad_at(DispersionVector { tau: psi.tau - h[0], ..psi });
            let h00 = (gp[0] - gm[0]) / (2.0 * h[0]);
            if h00 >= 0.0 {
                break;
            }
            Vector2::new(-g[0] / h00, 0.0)
        } else {
            let gtp = grad_at(DispersionVector { tau: psi.tau + h[0], ..psi });
            let gtm = grad_at(DispersionVector { tau: psi.tau - h[0], ..psi });
            let gpp = grad_at(DispersionVector { phi: psi.phi + h[1], ..psi });
            let gpm = grad_at(DispersionVector { phi: psi.phi - h[1], ..psi });
            let h00 = (gtp[0] - gtm[0]) / (2.0 * h[0]);
            let h11 = (gpp[1] - gpm[1]) / (2.0 * h[1]);
            let h01 = 0.5 * ((gtp[1] - gtm[1]) / (2.0 * h[0]) + (gpp[0] - gpm[0]) / (2.0 * h[1]));
            let hess = Matrix2::new(h00, h01, h01, h11);
            if !(h00 < 0.0 && hess.determinant() > 0.0) {
                break;
            }
            match hess.try_inverse() {
                Some(inv) => -(inv * Vector2::new(g[0], g[1])),
                None => break,
            }
        };
        let step = Vector2::new(step[0].clamp(-steps[0], steps[0]), step[1].clamp(-steps[1].max(0.0), steps[1].max(0.0)));
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..8 {
            let cand = DispersionVector::new(clamp_tau(psi.tau + scale * step[0], t_max), psi.phi + scale * step[1]);
            let st = eval(&cand);
            if st.t > best.t {
                accepted = Some((cand, st));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, st)) = accepted else { break };
        let gain = (st.t - best.t) / best.t.max(f64::MIN_POSITIVE);
        psi = cand;
        best = st;
        if gain < cfg.tolerance {
            break;
        }
    }
    if best.t >= start.1.t {
        (DispersionVector::new(psi.tau, wrap_angle(psi.phi)), best)
    } else {
        start
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::objective::{Component, ModelContext};
    use crate::model::{ArrayGeometry, PulseSpectrum};
    use crate::noise::DmcParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(rows: usize, cols: usize, n: usize) -> ModelContext {
        ModelContext::unambiguous(SteeringModel::new(
            ArrayGeometry::uniform_rectangular(rows, cols, 0.02, 0.0).unwrap(),
            PulseSpectrum::root_raised_cosine(0.6, 1.6e9, 6e9, n).unwrap(),
            true,
        ))
    }

    fn dmc() -> DmcParams {
        DmcParams {
            sigma2: 0.05,
            dmc_power: 0.5,
            beta: 1.0 / SPEED_OF_LIGHT,
            theta: 5e-9,
            xi: 1.8,
        }
    }

    #[test]
    fn grid_field_matches_direct_statistic() {
        let c = ctx(2, 5, 27);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = DVector::from_fn(c.model.dim(), |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let comps = [Component {
            psi: DispersionVector::new(5e-9, 0.3),
            gamma: 2.0,
        }];
        let prob = Problem::new(&c, &y, dmc()).unwrap();
        let res = prob.residual(&comps, None).unwrap();
        let grid = SearchGrid::new(&c.model, &c.domain, &GridConfig::default());
        let field = grid.evaluate(&prob, &res);
        for (j, i) in [(0, 0), (3, 17), (10, 50), (20, 80)] {
            let psi = DispersionVector::new(i as f64 * grid.tau_step(), grid.phis[j]);
            let direct = res.stat(&prob, &psi).t;
            assert!((field[j][i] - direct).abs() < 1e-9 * direct.max(1e-3), "{} {}", field[j][i], direct);
        }
    }

    #[test]
    fn noiseless_component_is_recovered() {
        let c = ctx(3, 3, 27);
        let truth = DispersionVector::new(7.123e-9, -1.234);
        let y = c.model.steering_vector(&truth) * Complex64::new(2.0, 1.0);
        let prob = Problem::new(&c, &y, DmcParams::white(1e-6)).unwrap();
        let res = prob.residual(&[], None).unwrap();
        let grid = SearchGrid::new(&c.model, &c.domain, &GridConfig::default());
        let field = grid.evaluate(&prob, &res);
        let peak = grid.peaks(&field, 1)[0].0;
        assert!((peak.tau - truth.tau).abs() <= grid.tau_step());
        assert!(wrap_angle(peak.phi - truth.phi).abs() <= grid.phi_step());
        let (psi, _) = candidate_search(&prob, &res, &grid, &GridConfig::default(), &RefineConfig::default()).unwrap();
        assert!((psi.tau - truth.tau).abs() < 1e-13, "{}", psi.tau - truth.tau);
        assert!(wrap_angle(psi.phi - truth.phi).abs() < 1e-4);
    }

    #[test]
    fn grid_meets_density_requirements() {
        let c = ctx(3, 3, 27);
        let grid = SearchGrid::new(&c.model, &c.domain, &GridConfig::default());
        assert!(grid.tau_step() <= 1.0 / (2.0 * c.model.spectrum.bandwidth()));
        let span_l = c.model.geometry.span() * 6e9 / SPEED_OF_LIGHT;
        assert!(grid.phi_step() <= TAU / (8.0 * span_l));
        let single = ModelContext::unambiguous(SteeringModel::new(
            ArrayGeometry::new(vec![[0.0, 0.0]], 0.0).unwrap(),
            c.model.spectrum.clone(),
            true,
        ));
        let g1 = SearchGrid::new(&single.model, &single.domain, &GridConfig::default());
        assert!(g1.fixes_angle());
        assert_eq!(g1.size().1, 1);
    }

    #[test]
    fn refine_never_worsens() {
        let c = ctx(2, 2, 27);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let y = DVector::from_fn(c.model.dim(), |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let prob = Problem::new(&c, &y, dmc()).unwrap();
            let res = prob.residual(&[], None).unwrap();
            let psi0 = DispersionVector::new(rng.random::<f64>() * 15e-9, rng.random::<f64>() * 6.0 - 3.0);
            let t0 = res.stat(&prob, &psi0).t;
            let (_, st) = refine(&prob, &res, psi0, [1e-10, 0.2], false, &RefineConfig::default());
            assert!(st.t >= t0);
        }
    }
}
