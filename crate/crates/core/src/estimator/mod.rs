//! Sparse-Bayesian-learning style joint detection and estimation.
//!
//! Each hypothetical component carries a precision `gamma_l` of its complex
//! amplitude. Integrating the amplitudes out leaves the marginal likelihood
//! of `psi`, `gamma` and the noise parameters `eta`, which is decreased one
//! parameter block at a time. A component whose statistic `|rho|^2 / zeta`
//! does not exceed `kappa` is pruned; new components are born at the maximum
//! of the same statistic over the dispersion domain.
//!
//! Every accepted step decreases `J = NLL + (kappa - 1 - ln kappa) K`, with
//! `K` the number of active components, so the recorded objective trace is
//! non-increasing for any `kappa >= 1`. For `kappa = 1` the penalty vanishes
//! and the NLL itself is monotone.

pub mod eta;
pub mod objective;
pub mod search;

use std::borrow::Cow;

use log::debug;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_angle, DispersionVector, SPEED_OF_LIGHT};
use crate::noise::DmcParams;
use crate::threshold::{excursion_constant_q, kappa_star};

pub use eta::{initial_eta, update_eta, EtaBounds, EtaUpdate};
pub use objective::{marginal_nll, residual_stats, update_gamma, Component, ModelContext, NoiseState, Problem, Residual, Stat};
pub use search::{candidate_search, refine, GridConfig, RefineConfig, SearchGrid};

use nalgebra::DVector;

/// How the pruning threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Fixed `kappa >= 1`.
    Kappa(f64),
    /// `kappa*(epsilon)` from the excursion constant of the (initial) noise model.
    Epsilon(f64),
}

/// Estimator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Maximum number of simultaneously active components `L`.
    pub budget: usize,
    pub threshold: ThresholdRule,
    pub max_outer_iterations: usize,
    /// Relative change of the penalized objective that ends the outer loop.
    pub tolerance: f64,
    pub grid: GridConfig,
    pub refine: RefineConfig,
    /// Use the wideband steering model (otherwise the narrowband one).
    pub wideband: bool,
    /// Keep `eta` fixed at [`EstimatorConfig::eta`].
    pub eta_known: bool,
    /// Known noise parameters, or the starting point when estimated.
    pub eta: Option<DmcParams>,
    /// Nelder–Mead iterations of the initial `eta` fit.
    pub eta_iterations: u64,
    /// Nelder–Mead iterations of the warm-started updates inside the loop.
    pub eta_refresh_iterations: u64,
    /// Delay range of the excursion-constant integral; `None` means `1/delta`.
    pub q_delay_range: Option<f64>,
    /// Try splitting each component in two once the loop has settled.
    pub split_moves: bool,
    /// Joint refinement sweeps over a split pair before it is judged.
    pub split_sweeps: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            budget: 10,
            threshold: ThresholdRule::Epsilon(0.01),
            max_outer_iterations: 200,
            tolerance: 1e-6,
            grid: GridConfig::default(),
            refine: RefineConfig::default(),
            wideband: true,
            eta_known: false,
            eta: None,
            eta_iterations: 120,
            eta_refresh_iterations: 40,
            q_delay_range: None,
            split_moves: true,
            split_sweeps: 8,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidParameter("component budget L must be at least 1".into()));
        }
        match self.threshold {
            ThresholdRule::Kappa(k) if !(k >= 1.0) => {
                return Err(Error::InvalidParameter(format!("kappa must be >= 1, got {k}")))
            }
            ThresholdRule::Epsilon(e) if !(e > 0.0) => {
                return Err(Error::InvalidParameter(format!("epsilon must be positive, got {e}")))
            }
            _ => {}
        }
        if self.eta_known && self.eta.is_none() {
            return Err(Error::InvalidParameter("eta_known requires eta".into()));
        }
        if let Some(eta) = &self.eta {
            eta.validate()?;
        }
        Ok(())
    }
}

/// Step of the outer loop recorded in the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Birth,
    Refine,
    Prune,
    Dedupe,
    Eta,
    Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub stage: Stage,
    pub nll: f64,
    /// `nll + (kappa - 1 - ln kappa) * active`.
    pub objective: f64,
    pub active: usize,
}

/// A detected component with its posterior mean amplitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectedComponent {
    pub psi: DispersionVector,
    pub gamma: f64,
    pub amplitude: Complex64,
    /// `|rho|^2 / zeta` at the final estimate.
    pub statistic: f64,
}

/// Output of [`run_estimation`].
#[derive(Clone, Debug)]
pub struct EstimationResult {
    /// Sorted by delay.
    pub components: Vec<DetectedComponent>,
    /// Posterior mean `mu = Sigma S^H Q^-1 y`.
    pub mean: DVector<Complex64>,
    /// Posterior covariance `Sigma = (S^H Q^-1 S + Gamma)^-1`.
    pub covariance: DMatrix<Complex64>,
    pub eta: DmcParams,
    pub nll: f64,
    pub objective: f64,
    pub kappa: f64,
    /// Excursion constant, when `kappa` was derived from `epsilon`.
    pub q: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    /// Births, deaths and recoverable numerical problems.
    pub events: Vec<String>,
}

#[derive(Serialize, Deserialize)]
pub struct ComponentRecord {
    pub tau_s: f64,
    #[serde(rename = "phi_deg", with = "crate::degrees")]
    pub phi: f64,
    pub amp_re: f64,
    pub amp_im: f64,
    pub gamma: f64,
}

/// JSON form of an [`EstimationResult`].
#[derive(Serialize, Deserialize)]
pub struct ResultRecord {
    pub components: Vec<ComponentRecord>,
    pub covariance_re: Vec<Vec<f64>>,
    pub covariance_im: Vec<Vec<f64>>,
    pub eta: DmcParams,
    pub nll: f64,
    pub objective: f64,
    pub kappa: f64,
    pub q: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub events: Vec<String>,
}

impl EstimationResult {
    pub fn to_record(&self) -> ResultRecord {
        let k = self.covariance.nrows();
        ResultRecord {
            components: self
                .components
                .iter()
                .map(|c| ComponentRecord {
                    tau_s: c.psi.tau,
                    phi: c.psi.phi,
                    amp_re: c.amplitude.re,
                    amp_im: c.amplitude.im,
                    gamma: c.gamma,
                })
                .collect(),
            covariance_re: (0..k).map(|i| (0..k).map(|j| self.covariance[(i, j)].re).collect()).collect(),
            covariance_im: (0..k).map(|i| (0..k).map(|j| self.covariance[(i, j)].im).collect()).collect(),
            eta: self.eta,
            nll: self.nll,
            objective: self.objective,
            kappa: self.kappa,
            q: self.q,
            iterations: self.iterations,
            converged: self.converged,
            trace: self.trace.clone(),
            events: self.events.clone(),
        }
    }

    /// Trace entries where the penalized objective increased by more than
    /// `tol` relative.
    pub fn objective_increases(&self, tol: f64) -> Vec<(usize, f64)> {
        self.trace
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| {
                let d = w[1].objective - w[0].objective;
                (d > tol * w[0].objective.abs().max(1.0)).then_some((i + 1, d))
            })
            .collect()
    }
}

struct Tracker {
    penalty: f64,
    trace: Vec<TraceEntry>,
}

impl Tracker {
    fn objective(&self, nll: f64, active: usize) -> f64 {
        nll + self.penalty * active as f64
    }

    fn push(&mut self, iteration: usize, stage: Stage, nll: f64, active: usize) {
        let objective = self.objective(nll, active);
        self.trace.push(TraceEntry {
            iteration,
            stage,
            nll,
            objective,
            active,
        });
    }
}

/// Resolution cells used to detect duplicated components.
fn duplicate_tolerances(ctx: &ModelContext) -> (f64, f64) {
    let m = &ctx.model;
    let tau = 1e-3 / m.spectrum.bandwidth();
    let span = m.geometry.span();
    let phi = if span > 0.0 {
        1e-3 * SPEED_OF_LIGHT / (m.spectrum.center_frequency().max(1.0) * span)
    } else {
        f64::INFINITY
    };
    (tau, phi)
}

/// One `eta` update with the components fixed. Returns the NLL decrease
/// (zero when nothing better was found) and leaves `prob` on the new `eta`.
///
/// With `fresh`, a second search starts from a moment fit to the current
/// residual, which lets `eta` escape a basin chosen before components
/// were born or removed.
fn eta_step<'a>(
    prob: &mut Problem<'a>,
    comps: &[Component],
    nll: &mut f64,
    bounds: &EtaBounds,
    cfg: &EstimatorConfig,
    fresh: bool,
    events: &mut Vec<String>,
) -> f64 {
    let ctx = prob.ctx;
    let y = prob.y;
    let mut best: Option<EtaUpdate> = update_eta(ctx, y, comps, &prob.noise.eta, bounds, cfg.eta_refresh_iterations)
        .map_err(|e| debug!("eta refresh: {e}"))
        .ok();
    if fresh {
        let start = prob.inner(comps).ok().map(|inner| {
            let mut r = y.clone();
            for (s, m) in inner.s.iter().zip(inner.mean.iter()) {
                r -= s * *m;
            }
            initial_eta(&r, ctx)
        });
        if let Some(start) = start {
            if let Ok(up) = update_eta(ctx, y, comps, &start, bounds, cfg.eta_iterations) {
                if best.as_ref().is_none_or(|b| up.nll < b.nll) {
                    best = Some(up);
                }
            }
        }
    }
    let Some(up) = best.filter(|u| u.nll < *nll) else {
        return 0.0;
    };
    match Problem::new(ctx, y, up.eta) {
        Ok(p) => {
            let gain = *nll - up.nll;
            *prob = p;
            *nll = up.nll;
            gain
        }
        Err(e) => {
            events.push(format!("eta update: {e}"));
            0.0
        }
    }
}

/// Replaces one component by a pair straddling it in delay or angle.
///
/// Greedy births cannot separate two nearly in-phase components closer than
/// the resolution limit: the merged fit leaves too little residual at either
/// true position. The pair is refined jointly for a few sweeps and kept only
/// when both members pass the threshold and the penalized objective drops.
fn try_splits(
    prob: &Problem,
    comps: &[Component],
    kappa: f64,
    tr: &Tracker,
    j_current: f64,
    steps: [f64; 2],
    fix_phi: bool,
    cfg: &EstimatorConfig,
) -> Option<(Vec<Component>, f64)> {
    let k = comps.len();
    let mut best: Option<(Vec<Component>, f64, f64)> = None;
    let offsets: &[[f64; 2]] = if fix_phi {
        &[[1.0, 0.0]]
    } else {
        &[[1.0, 0.0], [0.0, 0.5]]
    };
    for l in 0..k {
        for off in offsets {
            let d_tau = off[0] * steps[0];
            let d_phi = off[1] * steps[1];
            let c = comps[l];
            let mut cand = comps.to_vec();
            cand[l] = Component {
                psi: DispersionVector::new((c.psi.tau - d_tau).max(0.0), c.psi.phi - d_phi),
                gamma: 4.0 * c.gamma,
            };
            cand.push(Component {
                psi: DispersionVector::new(c.psi.tau + d_tau, c.psi.phi + d_phi),
                gamma: 4.0 * c.gamma,
            });
            let mut alive = true;
            'sweeps: for _ in 0..cfg.split_sweeps {
                for idx in [l, k] {
                    let Ok(res) = prob.residual(&cand, Some(idx)) else {
                        alive = false;
                        break 'sweeps;
                    };
                    let (psi, st) = refine(prob, &res, cand[idx].psi, steps, fix_phi, &cfg.refine);
                    match update_gamma(st.zeta(), st.rho(), 1.0) {
                        Some(gamma) => cand[idx] = Component { psi, gamma },
                        None => {
                            alive = false;
                            break 'sweeps;
                        }
                    }
                }
            }
            if !alive {
                continue;
            }
            // both members must survive the real threshold
            for idx in [l, k] {
                let st = prob.residual(&cand, Some(idx)).ok().map(|r| r.stat(prob, &cand[idx].psi));
                match st.and_then(|st| update_gamma(st.zeta(), st.rho(), kappa)) {
                    Some(gamma) => cand[idx].gamma = gamma,
                    None => alive = false,
                }
            }
            if !alive {
                continue;
            }
            let Ok(v) = prob.nll(&cand) else { continue };
            let j = tr.objective(v, cand.len());
            if j < j_current && best.as_ref().is_none_or(|b| j < b.2) {
                best = Some((cand, v, j));
            }
        }
    }
    best.map(|(c, v, _)| (c, v))
}

struct Descent<'a> {
    prob: Problem<'a>,
    eta: DmcParams,
    comps: Vec<Component>,
    nll: f64,
    tr: Tracker,
    events: Vec<String>,
    iterations: usize,
    converged: bool,
}

impl Descent<'_> {
    fn objective(&self) -> f64 {
        self.tr.objective(self.nll, self.comps.len())
    }
}

/// The outer loop from one starting `eta`, with `kappa` fixed.
fn descend<'a>(
    mut prob: Problem<'a>,
    kappa: f64,
    cfg: &EstimatorConfig,
    grid: &SearchGrid,
    bounds: &EtaBounds,
) -> Result<Descent<'a>> {
    let ctx = prob.ctx;
    let steps = [grid.tau_step(), grid.phi_step()];
    let mut eta = prob.noise.eta;
    let mut events = Vec::new();
    let mut tr = Tracker {
        penalty: kappa - 1.0 - kappa.ln(),
        trace: Vec::new(),
    };
    let (dup_tau, dup_phi) = duplicate_tolerances(ctx);

    let mut comps: Vec<Component> = Vec::new();
    let mut nll = prob.nll(&comps)?;
    tr.push(0, Stage::Init, nll, 0);
    let mut converged = false;
    let mut iterations = 0;
    // eta is refreshed while its updates pay off, and after every birth or death
    let mut eta_active = !cfg.eta_known;
    'outer: for iter in 1..=cfg.max_outer_iterations {
        iterations = iter;
        let j_start = tr.objective(nll, comps.len());
        let mut births = 0;
        let mut prunes = 0;

        while comps.len() < cfg.budget {
            let res = match prob.residual(&comps, None) {
                Ok(r) => r,
                Err(e) => {
                    events.push(format!("iteration {iter}: birth residual: {e}"));
                    break;
                }
            };
            let Some((psi, st)) = candidate_search(&prob, &res, grid, &cfg.grid, &cfg.refine) else {
                break;
            };
            if !(st.t > kappa) {
                break;
            }
            comps.push(Component {
                psi,
                gamma: st.v / (st.t - 1.0),
            });
            match prob.nll(&comps) {
                Ok(v) => {
                    nll = v;
                    births += 1;
                    events.push(format!(
                        "iteration {iter}: birth at tau={:.4e} s phi={:.4} rad (t={:.3})",
                        psi.tau, psi.phi, st.t
                    ));
                    tr.push(iter, Stage::Birth, nll, comps.len());
                }
                Err(e) => {
                    comps.pop();
                    events.push(format!("iteration {iter}: rejected birth: {e}"));
                    break;
                }
            }
        }

        let mut l = 0;
        while l < comps.len() {
            let res = match prob.residual(&comps, Some(l)) {
                Ok(r) => r,
                Err(e) => {
                    events.push(format!("iteration {iter}: refine residual: {e}"));
                    break 'outer;
                }
            };
            let (psi, st) = refine(&prob, &res, comps[l].psi, steps, grid.fixes_angle(), &cfg.refine);
            let stage = match update_gamma(st.zeta(), st.rho(), kappa) {
                Some(gamma) => {
                    comps[l] = Component { psi, gamma };
                    l += 1;
                    Stage::Refine
                }
                None => {
                    events.push(format!(
                        "iteration {iter}: pruned tau={:.4e} s phi={:.4} rad (t={:.3})",
                        psi.tau, psi.phi, st.t
                    ));
                    comps.remove(l);
                    prunes += 1;
                    Stage::Prune
                }
            };
            match prob.nll(&comps) {
                Ok(v) => nll = v,
                Err(e) => {
                    events.push(format!("iteration {iter}: {e}"));
                    break 'outer;
                }
            }
            tr.push(iter, stage, nll, comps.len());
        }

        // collapse duplicates, keeping the stronger of each pair
        let mut i = 0;
        while i < comps.len() {
            let mut removed = false;
            for j in i + 1..comps.len() {
                let a = comps[i].psi;
                let b = comps[j].psi;
                if (a.tau - b.tau).abs() < dup_tau && wrap_angle(a.phi - b.phi).abs() < dup_phi {
                    let ti = prob.residual(&comps, Some(i)).map(|r| r.stat(&prob, &a).t).unwrap_or(0.0);
                    let tj = prob.residual(&comps, Some(j)).map(|r| r.stat(&prob, &b).t).unwrap_or(0.0);
                    let drop = if ti < tj { i } else { j };
                    comps.remove(drop);
                    prunes += 1;
                    removed = true;
                    events.push(format!("iteration {iter}: removed duplicate component"));
                    break;
                }
            }
            if removed {
                match prob.nll(&comps) {
                    Ok(v) => nll = v,
                    Err(e) => {
                        events.push(format!("iteration {iter}: {e}"));
                        break 'outer;
                    }
                }
                tr.push(iter, Stage::Dedupe, nll, comps.len());
            } else {
                i += 1;
            }
        }

        let changed = births > 0 || prunes > 0;
        let mut eta_checked = false;
        if !cfg.eta_known && (changed || eta_active) {
            let gain = eta_step(&mut prob, &comps, &mut nll, bounds, cfg, changed, &mut events);
            eta_active = gain > cfg.tolerance * nll.abs().max(1.0);
            eta_checked = true;
            if gain > 0.0 {
                eta = prob.noise.eta;
                tr.push(iter, Stage::Eta, nll, comps.len());
            }
        }

        let j_end = tr.objective(nll, comps.len());
        if !changed && (j_start - j_end).abs() <= cfg.tolerance * j_start.abs().max(1.0) {
            // a frozen eta gets one more look before stopping
            if !cfg.eta_known && !eta_checked {
                let gain = eta_step(&mut prob, &comps, &mut nll, bounds, cfg, false, &mut events);
                if gain > 0.0 {
                    eta = prob.noise.eta;
                    tr.push(iter, Stage::Eta, nll, comps.len());
                }
                if gain > cfg.tolerance * nll.abs().max(1.0) {
                    eta_active = true;
                    continue;
                }
            }
            if cfg.split_moves && comps.len() < cfg.budget {
                let j = tr.objective(nll, comps.len());
                if let Some((split, v)) = try_splits(&prob, &comps, kappa, &tr, j, steps, grid.fixes_angle(), cfg) {
                    events.push(format!("iteration {iter}: split a component in two"));
                    comps = split;
                    nll = v;
                    tr.push(iter, Stage::Split, nll, comps.len());
                    eta_active = !cfg.eta_known;
                    continue;
                }
            }
            converged = true;
            break;
        }
    }

    Ok(Descent {
        prob,
        eta,
        comps,
        nll,
        tr,
        events,
        iterations,
        converged,
    })
}

/// Runs the estimator on one observation.
///
/// Fails only on invalid configuration or when the initial noise covariance
/// cannot be built; numerical trouble inside the loop is recorded in
/// [`EstimationResult::events`] and ends the iteration early.
pub fn run_estimation(y: &DVector<Complex64>, cfg: &EstimatorConfig, ctx: &ModelContext) -> Result<EstimationResult> {
    cfg.validate()?;
    let ctx: Cow<ModelContext> = if ctx.model.wideband == cfg.wideband {
        Cow::Borrowed(ctx)
    } else {
        Cow::Owned(ModelContext::new(ctx.model.with_wideband(cfg.wideband), ctx.domain))
    };
    let ctx = ctx.as_ref();
    if y.len() != ctx.model.dim() {
        return Err(Error::InvalidParameter(format!(
            "observation has length {} but the model expects {}",
            y.len(),
            ctx.model.dim()
        )));
    }
    if y.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite("observation".into()));
    }
    let grid = SearchGrid::new(&ctx.model, &ctx.domain, &cfg.grid);
    let bounds = EtaBounds::for_observation(y, ctx);
    let mut events = Vec::new();

    let start = match cfg.eta {
        Some(e) => e,
        None => initial_eta(y, ctx),
    };
    let mut eta = start;
    if !cfg.eta_known {
        match update_eta(ctx, y, &[], &eta, &bounds, cfg.eta_iterations) {
            Ok(up) => eta = up.eta,
            Err(e) => events.push(format!("initial eta fit: {e}")),
        }
    }
    let prob = Problem::new(ctx, y, eta)?;
    let (kappa, q) = match cfg.threshold {
        ThresholdRule::Kappa(k) => (k, None),
        ThresholdRule::Epsilon(e) => {
            let q = excursion_constant_q(&ctx.model, &prob.noise.cov, cfg.q_delay_range)?;
            (kappa_star(e, q)?.kappa_star, Some(q))
        }
    };
    let mut run = descend(prob, kappa, cfg, &grid, &bounds)?;
    if !cfg.eta_known {
        // A shape fitted before any component exists can collapse onto the
        // strongest paths. The second start keeps the broad starting shape
        // until the components have been born.
        let second = Problem::new(ctx, y, start).and_then(|p| descend(p, kappa, cfg, &grid, &bounds));
        match second {
            Ok(b) if b.objective() < run.objective() => {
                events.push("second start selected".into());
                run = b;
            }
            Ok(_) => {}
            Err(e) => events.push(format!("second start: {e}")),
        }
    }
    events.append(&mut run.events);
    let Descent {
        prob,
        eta,
        mut comps,
        nll,
        tr,
        iterations,
        converged,
        ..
    } = run;
    comps.sort_by(|a, b| a.psi.tau.total_cmp(&b.psi.tau));
    let (mean, covariance, comps) = match prob.inner(&comps) {
        Ok(inner) => (inner.mean, inner.sigma, comps),
        Err(e) => {
            events.push(format!("final posterior: {e}"));
            (DVector::zeros(0), DMatrix::zeros(0, 0), Vec::new())
        }
    };
    let components = comps
        .iter()
        .enumerate()
        .map(|(l, c)| DetectedComponent {
            psi: c.psi,
            gamma: c.gamma,
            amplitude: mean[l],
            statistic: prob.residual(&comps, Some(l)).map(|r| r.stat(&prob, &c.psi).t).unwrap_or(f64::NAN),
        })
        .collect();
    let nll = prob.nll(&comps).unwrap_or(nll);
    Ok(EstimationResult {
        components,
        mean,
        covariance,
        eta,
        nll,
        objective: tr.objective(nll, comps.len()),
        kappa,
        q,
        iterations,
        converged,
        trace: tr.trace,
        events,
    })
}
