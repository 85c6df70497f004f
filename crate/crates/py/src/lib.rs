//! Python bindings. Configurations and results are exchanged as JSON strings
//! in the same format as the command-line tool.

use engine::estimator::{run_estimation, ModelContext};
use engine::harness::{run_experiment, ExperimentConfig};
use engine::nalgebra::DVector;
use engine::noise::build_structured_covariance;
use engine::threshold;
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: engine::Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn load(config: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_json(config).map_err(to_py)
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Draws trial `trial` of the configured scenario. Returns the observation
/// (antenna-major) and the ground truth as JSON.
#[pyfunction]
#[pyo3(signature = (config, trial = 0))]
fn simulate(config: &str, trial: u64) -> PyResult<(Vec<Complex64>, String)> {
    let cfg = load(config)?;
    let obs = cfg.simulator().and_then(|s| s.draw_observation(trial)).map_err(to_py)?;
    Ok((obs.y.iter().copied().collect(), json(&obs.truth)?))
}

/// Estimates the components of `y`; returns the result record as JSON.
#[pyfunction]
fn estimate(config: &str, y: Vec<Complex64>) -> PyResult<String> {
    let cfg = load(config)?;
    let ctx = cfg.context().map_err(to_py)?;
    let ctx = ModelContext::new(ctx.model.with_wideband(cfg.estimator.wideband), ctx.domain);
    let result = run_estimation(&DVector::from_vec(y), &cfg.estimator, &ctx).map_err(to_py)?;
    json(&result.to_record())
}

/// Excursion constant for the noise parameters in `estimator.eta`, or for
/// the true parameters of trial 0 when those are not given.
#[pyfunction]
fn excursion_constant(config: &str) -> PyResult<f64> {
    let cfg = load(config)?;
    let sim = cfg.simulator().map_err(to_py)?;
    let eta = match cfg.estimator.eta {
        Some(eta) => eta,
        None => sim.eta(&sim.draw_observation(0).map_err(to_py)?.truth),
    };
    let model = sim.ctx.model.with_wideband(cfg.estimator.wideband);
    let cov = build_structured_covariance(&eta, &model.spectrum, model.n_ant(), &sim.ctx.domain).map_err(to_py)?;
    threshold::excursion_constant_q(&model, &cov, cfg.estimator.q_delay_range).map_err(to_py)
}

#[pyfunction]
fn kappa_star(epsilon: f64, q: f64) -> PyResult<f64> {
    threshold::kappa_star(epsilon, q).map(|s| s.kappa_star).map_err(to_py)
}

#[pyfunction]
fn p_false(kappa: f64, q: f64) -> f64 {
    threshold::p_false(kappa, q)
}

#[pyfunction]
fn p_miss(kappa: f64, eta_bar: f64) -> f64 {
    threshold::p_miss(kappa, eta_bar)
}

/// Runs a Monte-Carlo study; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (config, trials = None))]
fn evaluate(py: Python<'_>, config: &str, trials: Option<usize>) -> PyResult<String> {
    let mut cfg = load(config)?;
    if let Some(t) = trials {
        cfg.metrics.trials = t;
    }
    let out = py.detach(|| run_experiment(&cfg)).map_err(to_py)?;
    json(&out.summary)
}

#[pymodule]
#[pyo3(name = "uwbsr")]
fn uwbsr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(excursion_constant, m)?)?;
    m.add_function(wrap_pyfunction!(kappa_star, m)?)?;
    m.add_function(wrap_pyfunction!(p_false, m)?)?;
    m.add_function(wrap_pyfunction!(p_miss, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
