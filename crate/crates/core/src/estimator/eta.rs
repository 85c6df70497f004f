//! Noise-parameter update by bounded derivative-free minimization.

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use log::debug;
use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::objective::{Component, ModelContext, Problem};
use crate::error::{Error, Result};
use crate::noise::DmcParams;

/// Box constraints on `eta`, in the optimizer's coordinates
/// `[ln sigma2, ln P, beta / T, ln theta, ln xi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaBounds {
    pub lower: [f64; 5],
    pub upper: [f64; 5],
    pub max_delay: f64,
}

impl EtaBounds {
    /// Default box: `sigma2, P` in `[1e-12, 1e6]` times the input power,
    /// `theta` in `[1/B, T]`, `xi` in `[0.5, 20]`, `beta` in `[0, T/2]`.
    /// A spectrum narrower than `1/B` would be a resolvable line rather than
    /// dense multipath.
    pub fn for_observation(y: &DVector<Complex64>, ctx: &ModelContext) -> Self {
        let power = (y.norm_squared() / y.len() as f64).max(f64::MIN_POSITIVE);
        let t = ctx.domain.max_delay();
        let b = ctx.model.spectrum.bandwidth();
        let lp = power.ln();
        Self {
            lower: [lp + 1e-12f64.ln(), lp + 1e-12f64.ln(), 0.0, (1.0 / b).ln(), 0.5f64.ln()],
            upper: [lp + 1e6f64.ln(), lp + 1e6f64.ln(), 0.5, t.ln(), 20f64.ln()],
            max_delay: t,
        }
    }

    fn clamp(&self, p: &[f64]) -> [f64; 5] {
        let mut out = [0.0; 5];
        for i in 0..5 {
            out[i] = p[i].clamp(self.lower[i], self.upper[i]);
        }
        out
    }

    pub fn encode(&self, eta: &DmcParams) -> [f64; 5] {
        let raw = [
            eta.sigma2.max(f64::MIN_POSITIVE).ln(),
            eta.dmc_power.max(f64::MIN_POSITIVE).ln(),
            eta.beta / self.max_delay,
            eta.theta.ln(),
            eta.xi.ln(),
        ];
        self.clamp(&raw)
    }

    pub fn decode(&self, p: &[f64]) -> DmcParams {
        let c = self.clamp(p);
        DmcParams {
            sigma2: c[0].exp(),
            dmc_power: c[1].exp(),
            beta: c[2] * self.max_delay,
            theta: c[3].exp(),
            xi: c[4].exp(),
        }
    }
}

/// Rough starting point: half the input power white, half dense.
pub fn initial_eta(y: &DVector<Complex64>, ctx: &ModelContext) -> DmcParams {
    let power = y.norm_squared() / y.len() as f64;
    let n = ctx.model.n_freq() as f64;
    let energy = ctx.model.spectrum.energy().max(f64::MIN_POSITIVE);
    let t = ctx.domain.max_delay();
    DmcParams {
        sigma2: 0.5 * power,
        dmc_power: 0.5 * power * n / energy,
        beta: 0.1 * t,
        theta: 0.2 * t,
        xi: 1.5,
    }
}

struct EtaCost<'a> {
    ctx: &'a ModelContext,
    y: &'a DVector<Complex64>,
    comps: &'a [Component],
    bounds: EtaBounds,
}

impl CostFunction for EtaCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, ArgminError> {
        let eta = self.bounds.decode(p);
        // a quadratic wall outside the box keeps the simplex from drifting away
        let excess: f64 = (0..5)
            .map(|i| (p[i] - p[i].clamp(self.bounds.lower[i], self.bounds.upper[i])).powi(2))
            .sum();
        let nll = Problem::new(self.ctx, self.y, eta)
            .and_then(|prob| prob.nll(self.comps))
            .unwrap_or(f64::MAX / 4.0);
        Ok(nll + 1e3 * excess)
    }
}

/// Outcome of an `eta` update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaUpdate {
    pub eta: DmcParams,
    pub nll: f64,
    pub evaluations: u64,
}

/// Minimizes the marginal NLL over `eta` with the components held fixed.
///
/// Returns [`Error::OptimizerStalled`] when no point better than `eta_init`
/// was found; the caller keeps `eta_init` in that case.
pub fn update_eta(
    ctx: &ModelContext,
    y: &DVector<Complex64>,
    comps: &[Component],
    eta_init: &DmcParams,
    bounds: &EtaBounds,
    max_iterations: u64,
) -> Result<EtaUpdate> {
    let start = bounds.encode(eta_init);
    let start_nll = Problem::new(ctx, y, bounds.decode(&start))?.nll(comps)?;
    let steps = [0.5, 0.5, 0.05, 0.3, 0.3];
    let mut simplex = vec![start.to_vec()];
    for i in 0..5 {
        let mut p = start.to_vec();
        let span = bounds.upper[i] - bounds.lower[i];
        p[i] = if p[i] + steps[i] <= bounds.upper[i] || span < steps[i] {
            p[i] + steps[i].min(span.max(1e-9))
        } else {
            p[i] - steps[i]
        };
        simplex.push(p);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-9)
        .map_err(|_| Error::OptimizerStalled)?;
    let cost = EtaCost {
        ctx,
        y,
        comps,
        bounds: *bounds,
    };
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(max_iterations))
        .run()
        .map_err(|e| {
            debug!("eta optimizer failed: {e}");
            Error::OptimizerStalled
        })?;
    let state = res.state();
    let evaluations = state.get_func_counts().get("cost_count").copied().unwrap_or(0);
    let best = state.get_best_param().cloned().ok_or(Error::OptimizerStalled)?;
    let eta = bounds.decode(&best);
    let nll = Problem::new(ctx, y, eta)?.nll(comps)?;
    if nll < start_nll {
        Ok(EtaUpdate { eta, nll, evaluations })
    } else {
        Err(Error::OptimizerStalled)
    }
}
