//! Monte-Carlo driver: draw, estimate, classify and associate each trial,
//! then aggregate.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use log::warn;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::crb::{crb, ComponentCrb};
use super::metrics::{
    binomial_acceptance, classify_events, clopper_pearson, ospa_associate, EventFlags, OspaSettings, PairError,
};
use crate::error::{Error, Result};
use crate::estimator::{run_estimation, EstimationResult, EstimatorConfig, ModelContext};
use crate::model::{DispersionVector, SPEED_OF_LIGHT};
use crate::noise::{build_structured_covariance, DmcParams};
use crate::simulator::{Simulator, SyntheticObservation, Truth};
use crate::threshold::{deflection, excursion_constant_q, p_false, p_miss};

const LEVEL: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// A detected component as stored in trial records.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub tau_s: f64,
    #[serde(rename = "phi_deg", with = "crate::degrees")]
    pub phi: f64,
    pub amp_re: f64,
    pub amp_im: f64,
}

/// An associated pair with its amplitude error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialPair {
    #[serde(flatten)]
    pub error: PairError,
    /// `|alpha_hat| - |alpha|`.
    pub delta_abs_alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub status: TrialStatus,
    pub error: Option<String>,
    pub truth: Option<Truth>,
    pub detections: Vec<Detection>,
    pub kappa: Option<f64>,
    pub q: Option<f64>,
    /// Only for single-component truth.
    pub events: Option<EventFlags>,
    pub ospa: Option<f64>,
    pub pairs: Vec<TrialPair>,
    /// Bounds for the true components; empty when the FIM is singular.
    pub crb: Vec<ComponentCrb>,
    pub p_false_theory: Option<f64>,
    pub p_miss_theory: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub runtime_s: f64,
}

impl TrialRecord {
    fn failed(trial: u64, error: String, truth: Option<Truth>, runtime_s: f64) -> Self {
        Self {
            trial,
            status: TrialStatus::Failed,
            error: Some(error),
            truth,
            detections: Vec::new(),
            kappa: None,
            q: None,
            events: None,
            ospa: None,
            pairs: Vec::new(),
            crb: Vec::new(),
            p_false_theory: None,
            p_miss_theory: None,
            converged: false,
            iterations: 0,
            runtime_s,
        }
    }

    pub fn n_true(&self) -> usize {
        self.truth.as_ref().map_or(0, |t| t.components.len())
    }

    pub fn n_detected(&self) -> usize {
        self.detections.len()
    }
}

/// Empirical event frequency with its interval and the theoretical overlay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub events: u64,
    pub trials: u64,
    pub frequency: f64,
    /// Clopper–Pearson interval of the frequency.
    pub ci95: [f64; 2],
    /// Mean of the per-trial theoretical probabilities.
    pub theory: Option<f64>,
    /// Central 95% range of the frequency if the theory were exact.
    pub theory_range95: Option<[f64; 2]>,
}

impl RateEstimate {
    fn new(events: u64, trials: u64, theory: Option<f64>) -> Self {
        let (lo, hi) = clopper_pearson(events, trials, LEVEL);
        Self {
            events,
            trials,
            frequency: if trials > 0 { events as f64 / trials as f64 } else { f64::NAN },
            ci95: [lo, hi],
            theory,
            theory_range95: theory.map(|p| {
                let (a, b) = binomial_acceptance(p, trials, LEVEL);
                [a, b]
            }),
        }
    }

    /// Whether the empirical frequency lies in the acceptance range of the theory.
    pub fn agrees_with_theory(&self) -> Option<bool> {
        self.theory_range95
            .map(|[lo, hi]| self.frequency >= lo - 1e-12 && self.frequency <= hi + 1e-12)
    }
}

/// RMSE over trials with exactly the true number of detections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseSummary {
    pub conditioned_trials: u64,
    pub conditioning_frequency: f64,
    pub rmse_d_m: f64,
    pub rmse_phi_deg: f64,
    /// Root of the mean CRB over the same pairs.
    pub sqrt_crb_d_m: Option<f64>,
    pub sqrt_crb_phi_deg: Option<f64>,
    pub abs_alpha_mean_error: f64,
    pub abs_alpha_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: u64,
    pub completed: u64,
    pub failed: u64,
    pub mean_detected: f64,
    /// Number of true components when it is the same in every trial.
    pub true_count: Option<usize>,
    pub exact_count_frequency: Option<f64>,
    pub detected_histogram: Vec<u64>,
    pub false_detection: Option<RateEstimate>,
    pub missed_detection: Option<RateEstimate>,
    pub rmse: Option<RmseSummary>,
    pub mean_ospa: Option<f64>,
    pub mean_kappa: Option<f64>,
    pub mean_q: Option<f64>,
    pub runtime_s: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

/// Per-run state shared by all workers.
struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    sim: Simulator,
    est_ctx: ModelContext,
    ospa: OspaSettings,
    q_cache: Mutex<HashMap<[u64; 5], f64>>,
}

fn eta_key(eta: &DmcParams) -> [u64; 5] {
    [eta.sigma2, eta.dmc_power, eta.beta, eta.theta, eta.xi].map(f64::to_bits)
}

impl Runner<'_> {
    fn estimator_config(&self, truth_eta: DmcParams) -> EstimatorConfig {
        let mut est = self.cfg.estimator.clone();
        if est.eta_known && est.eta.is_none() {
            est.eta = Some(truth_eta);
        }
        est
    }

    fn q_for(&self, eta: &DmcParams) -> Result<f64> {
        let key = eta_key(eta);
        if let Some(q) = self.q_cache.lock().map_err(|_| Error::Config("poisoned cache".into()))?.get(&key) {
            return Ok(*q);
        }
        let ctx = &self.sim.ctx;
        let cov = build_structured_covariance(eta, &ctx.model.spectrum, ctx.model.n_ant(), &ctx.domain)?;
        let q = excursion_constant_q(&ctx.model.with_wideband(self.cfg.estimator.wideband), &cov, self.cfg.estimator.q_delay_range)?;
        if let Ok(mut cache) = self.q_cache.lock() {
            cache.insert(key, q);
        }
        Ok(q)
    }

    fn run_trial(&self, trial: u64) -> TrialRecord {
        let start = Instant::now();
        let obs = match self.sim.draw_observation(trial) {
            Ok(o) => o,
            Err(e) => return TrialRecord::failed(trial, e.to_string(), None, start.elapsed().as_secs_f64()),
        };
        let truth_eta = self.sim.eta(&obs.truth);
        let est = self.estimator_config(truth_eta);
        let outcome = catch_unwind(AssertUnwindSafe(|| run_estimation(&obs.y, &est, &self.est_ctx)));
        let result = match outcome {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => {
                warn!("trial {trial}: {e}");
                return TrialRecord::failed(trial, e.to_string(), Some(obs.truth), start.elapsed().as_secs_f64());
            }
            Err(_) => {
                warn!("trial {trial}: estimator panicked");
                return TrialRecord::failed(
                    trial,
                    "estimator panicked".into(),
                    Some(obs.truth),
                    start.elapsed().as_secs_f64(),
                );
            }
        };
        let runtime = start.elapsed().as_secs_f64();
        self.score(trial, &obs, &result, truth_eta, runtime)
    }

    fn score(
        &self,
        trial: u64,
        obs: &SyntheticObservation,
        result: &EstimationResult,
        truth_eta: DmcParams,
        runtime_s: f64,
    ) -> TrialRecord {
        let ctx = &self.sim.ctx;
        let truth = &obs.truth;
        let true_psi = truth.dispersion();
        let true_alpha = truth.amplitudes();
        let det_psi: Vec<DispersionVector> = result.components.iter().map(|c| c.psi).collect();

        let cov = build_structured_covariance(&truth_eta, &ctx.model.spectrum, ctx.model.n_ant(), &ctx.domain);
        let crbs = match (&cov, true_psi.is_empty()) {
            (Ok(cov), false) => crb(&ctx.model, &true_psi, &true_alpha, cov).unwrap_or_default(),
            _ => Vec::new(),
        };
        let events = (true_psi.len() == 1 && crbs.len() == 1).then(|| {
            classify_events(&det_psi, &true_psi[0], crbs[0].tau, crbs[0].phi, self.cfg.metrics.region_multiplier)
        });
        let assoc = ospa_associate(&det_psi, &true_psi, &self.ospa);
        let pairs = assoc
            .pairs
            .iter()
            .map(|p| TrialPair {
                error: *p,
                delta_abs_alpha: result.components[p.detection].amplitude.norm() - true_alpha[p.truth].norm(),
            })
            .collect();

        let q_theory = result.q.or_else(|| self.q_for(&truth_eta).ok());
        let p_false_theory = q_theory.map(|q| p_false(result.kappa, q));
        let p_miss_theory = match (&cov, true_psi.len()) {
            (Ok(cov), 1) => {
                let model = ctx.model.with_wideband(self.cfg.estimator.wideband);
                Some(p_miss(result.kappa, deflection(true_alpha[0], &true_psi[0], &model, cov)))
            }
            _ => None,
        };

        TrialRecord {
            trial,
            status: TrialStatus::Ok,
            error: None,
            truth: Some(truth.clone()),
            detections: result
                .components
                .iter()
                .map(|c| Detection {
                    tau_s: c.psi.tau,
                    phi: c.psi.phi,
                    amp_re: c.amplitude.re,
                    amp_im: c.amplitude.im,
                })
                .collect(),
            kappa: Some(result.kappa),
            q: q_theory,
            events,
            ospa: Some(assoc.ospa),
            pairs,
            crb: crbs,
            p_false_theory,
            p_miss_theory,
            converged: result.converged,
            iterations: result.iterations,
            runtime_s,
        }
    }
}

/// Runs all trials of `cfg` and aggregates them. Trial failures are recorded,
/// not propagated; errors are returned only for an unusable configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let sim = cfg.simulator()?;
    let est_ctx = ModelContext::new(sim.ctx.model.with_wideband(cfg.estimator.wideband), sim.ctx.domain);
    let m = &cfg.metrics;
    let runner = Runner {
        cfg,
        sim,
        est_ctx,
        ospa: OspaSettings {
            cutoff: m.ospa_cutoff,
            order: m.ospa_order,
            rrl_distance_m: m.rrl_distance_m,
            rrl_angle: m.rrl_angle,
        },
        q_cache: Mutex::new(HashMap::new()),
    };
    let trials = m.trials as u64;
    let run = || -> Vec<TrialRecord> { (0..trials).into_par_iter().map(|t| runner.run_trial(t)).collect() };
    let mut records = match m.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run),
        None => run(),
    };
    records.sort_by_key(|r| r.trial);
    let summary = summarize(&records);
    Ok(ExperimentOutput { records, summary })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Aggregates records; the result does not depend on their order.
pub fn summarize(records: &[TrialRecord]) -> Summary {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.trial);
    let ok: Vec<&TrialRecord> = sorted.iter().copied().filter(|r| r.status == TrialStatus::Ok).collect();
    let completed = ok.len() as u64;

    let max_det = ok.iter().map(|r| r.n_detected()).max().unwrap_or(0);
    let mut histogram = vec![0u64; max_det + 1];
    for r in &ok {
        histogram[r.n_detected()] += 1;
    }
    let true_count = ok.first().map(|r| r.n_true()).filter(|k| ok.iter().all(|r| r.n_true() == *k));
    let exact = true_count.map(|k| ok.iter().filter(|r| r.n_detected() == k).count() as f64 / completed as f64);

    let classified: Vec<(&TrialRecord, EventFlags)> = ok.iter().filter_map(|r| r.events.map(|e| (*r, e))).collect();
    let (false_detection, missed_detection) = if classified.is_empty() {
        (None, None)
    } else {
        let n = classified.len() as u64;
        let nf = classified.iter().filter(|(_, e)| e.false_detection).count() as u64;
        let nm = classified.iter().filter(|(_, e)| e.missed_detection).count() as u64;
        let pf = mean(classified.iter().filter_map(|(r, _)| r.p_false_theory));
        let pm = mean(classified.iter().filter_map(|(r, _)| r.p_miss_theory));
        (Some(RateEstimate::new(nf, n, pf)), Some(RateEstimate::new(nm, n, pm)))
    };

    let rmse = true_count.filter(|k| *k > 0).and_then(|k| {
        let cond: Vec<&&TrialRecord> = ok.iter().filter(|r| r.n_detected() == k).collect();
        if cond.is_empty() {
            return None;
        }
        let pairs: Vec<(&TrialRecord, &TrialPair)> = cond.iter().flat_map(|r| r.pairs.iter().map(move |p| (**r, p))).collect();
        let n = pairs.len() as f64;
        let ms = |f: &dyn Fn(&TrialPair) -> f64| pairs.iter().map(|(_, p)| f(p).powi(2)).sum::<f64>() / n;
        let with_crb: Vec<&ComponentCrb> = pairs.iter().filter_map(|(r, p)| r.crb.get(p.error.truth)).collect();
        let crb_ok = with_crb.len() == pairs.len();
        Some(RmseSummary {
            conditioned_trials: cond.len() as u64,
            conditioning_frequency: cond.len() as f64 / completed as f64,
            rmse_d_m: ms(&|p| p.error.delta_d_m).sqrt(),
            rmse_phi_deg: ms(&|p| p.error.delta_phi).sqrt().to_degrees(),
            sqrt_crb_d_m: crb_ok.then(|| {
                (with_crb.iter().map(|c| c.tau).sum::<f64>() / n).sqrt() * SPEED_OF_LIGHT
            }),
            sqrt_crb_phi_deg: crb_ok.then(|| (with_crb.iter().map(|c| c.phi).sum::<f64>() / n).sqrt().to_degrees()),
            abs_alpha_mean_error: pairs.iter().map(|(_, p)| p.delta_abs_alpha).sum::<f64>() / n,
            abs_alpha_rmse: ms(&|p| p.delta_abs_alpha).sqrt(),
        })
    });

    Summary {
        trials: records.len() as u64,
        completed,
        failed: records.len() as u64 - completed,
        mean_detected: mean(ok.iter().map(|r| r.n_detected() as f64)).unwrap_or(f64::NAN),
        true_count,
        exact_count_frequency: exact,
        detected_histogram: histogram,
        false_detection,
        missed_detection,
        rmse,
        mean_ospa: mean(ok.iter().filter_map(|r| r.ospa)),
        mean_kappa: mean(ok.iter().filter_map(|r| r.kappa)),
        mean_q: mean(ok.iter().filter_map(|r| r.q)),
        runtime_s: sorted.iter().map(|r| r.runtime_s).sum(),
    }
}

/// Flat CSV form of a trial; list-valued fields are `;`-separated.
#[derive(Debug, Serialize)]
struct CsvRow {
    trial: u64,
    status: TrialStatus,
    error: String,
    n_true: usize,
    n_detected: usize,
    kappa: Option<f64>,
    q: Option<f64>,
    false_detection: Option<bool>,
    missed_detection: Option<bool>,
    ospa: Option<f64>,
    detections: String,
    truth: String,
    delta_d_m: String,
    delta_phi_deg: String,
    delta_abs_alpha: String,
    sqrt_crb_d_m: String,
    sqrt_crb_phi_deg: String,
    p_false_theory: Option<f64>,
    p_miss_theory: Option<f64>,
    sigma2: Option<f64>,
    dmc_power: Option<f64>,
    converged: bool,
    iterations: usize,
    runtime_s: f64,
}

fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(";")
}

fn component_text(tau: f64, phi: f64, a: Complex64) -> String {
    format!("{tau:e}|{}|{}|{}", phi.to_degrees(), a.re, a.im)
}

impl From<&TrialRecord> for CsvRow {
    fn from(r: &TrialRecord) -> Self {
        Self {
            trial: r.trial,
            status: r.status,
            error: r.error.clone().unwrap_or_default(),
            n_true: r.n_true(),
            n_detected: r.n_detected(),
            kappa: r.kappa,
            q: r.q,
            false_detection: r.events.map(|e| e.false_detection),
            missed_detection: r.events.map(|e| e.missed_detection),
            ospa: r.ospa,
            detections: join(&r.detections, |d| component_text(d.tau_s, d.phi, Complex64::new(d.amp_re, d.amp_im))),
            truth: r.truth.as_ref().map_or(String::new(), |t| {
                join(&t.components, |c| component_text(c.tau_s, c.phi, Complex64::new(c.amp_re, c.amp_im)))
            }),
            delta_d_m: join(&r.pairs, |p| p.error.delta_d_m.to_string()),
            delta_phi_deg: join(&r.pairs, |p| p.error.delta_phi.to_degrees().to_string()),
            delta_abs_alpha: join(&r.pairs, |p| p.delta_abs_alpha.to_string()),
            sqrt_crb_d_m: join(&r.crb, |c| c.distance_std().to_string()),
            sqrt_crb_phi_deg: join(&r.crb, |c| c.phi.sqrt().to_degrees().to_string()),
            p_false_theory: r.p_false_theory,
            p_miss_theory: r.p_miss_theory,
            sigma2: r.truth.as_ref().map(|t| t.sigma2),
            dmc_power: r.truth.as_ref().map(|t| t.dmc_power),
            converged: r.converged,
            iterations: r.iterations,
            runtime_s: r.runtime_s,
        }
    }
}

/// Column documentation written next to the CSV.
#[derive(Serialize)]
struct Column {
    name: &'static str,
    unit: &'static str,
    description: &'static str,
}

const SCHEMA: &[Column] = &[
    Column { name: "trial", unit: "", description: "trial index; also the RNG stream" },
    Column { name: "status", unit: "", description: "ok or failed" },
    Column { name: "error", unit: "", description: "failure message, empty when ok" },
    Column { name: "n_true", unit: "", description: "number of true specular components" },
    Column { name: "n_detected", unit: "", description: "number of detected components" },
    Column { name: "kappa", unit: "", description: "pruning threshold used" },
    Column { name: "q", unit: "", description: "excursion constant (estimator's, else from the true noise)" },
    Column { name: "false_detection", unit: "", description: "a detection lies outside the CRB region (single-component truth only)" },
    Column { name: "missed_detection", unit: "", description: "no detection inside the CRB region (single-component truth only)" },
    Column { name: "ospa", unit: "RRL", description: "OSPA distance on resolution-normalized coordinates" },
    Column { name: "detections", unit: "s|deg|1|1", description: "tau|phi|Re a|Im a per detection, ';'-separated, sorted by delay" },
    Column { name: "truth", unit: "s|deg|1|1", description: "tau|phi|Re a|Im a per true component" },
    Column { name: "delta_d_m", unit: "m", description: "distance error c(tau_hat - tau) per associated pair, ordered by true component" },
    Column { name: "delta_phi_deg", unit: "deg", description: "wrapped angle error per associated pair" },
    Column { name: "delta_abs_alpha", unit: "1", description: "|a_hat| - |a| per associated pair" },
    Column { name: "sqrt_crb_d_m", unit: "m", description: "root CRB of the distance per true component" },
    Column { name: "sqrt_crb_phi_deg", unit: "deg", description: "root CRB of the angle per true component" },
    Column { name: "p_false_theory", unit: "", description: "q kappa exp(-kappa)" },
    Column { name: "p_miss_theory", unit: "", description: "missed-detection probability from the true deflection (single component)" },
    Column { name: "sigma2", unit: "", description: "white noise variance of the trial" },
    Column { name: "dmc_power", unit: "", description: "dense multipath power of the trial" },
    Column { name: "converged", unit: "", description: "estimator met its tolerance" },
    Column { name: "iterations", unit: "", description: "outer iterations" },
    Column { name: "runtime_s", unit: "s", description: "wall time of draw plus estimation" },
];

/// Writes `trials.csv`, `summary.json`, `schema.json` and `config.json` into `dir`.
pub fn write_results(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("trials.csv"))?;
    for r in &out.records {
        w.serialize(CsvRow::from(r))?;
    }
    w.flush()?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&out.summary)?)?;
    std::fs::write(dir.join("schema.json"), serde_json::to_string_pretty(SCHEMA)?)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = r#"{
        "geometry": {"kind": "rectangular", "rows": 2, "cols": 2, "spacing_m": 0.025},
        "spectrum": {"kind": "root_raised_cosine", "rolloff": 0.6, "bandwidth_hz": 1.6e9,
                     "center_frequency_hz": 6e9, "samples": 16},
        "scenario": {"placement": {"rule": "random", "count": 1, "tau_s": 5e-9},
                     "snr_db": 25, "seed": 11},
        "estimator": {"threshold": {"kappa": 12.0}, "eta_known": true},
        "metrics": {"trials": 6}
    }"#;

    #[test]
    fn experiment_produces_one_record_per_trial() {
        let cfg = ExperimentConfig::from_json(SINGLE).unwrap();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), 6);
        assert_eq!(out.summary.completed, 6);
        assert_eq!(out.summary.true_count, Some(1));
        let fd = out.summary.false_detection.unwrap();
        assert_eq!(fd.trials, 6);
        assert!(out.records.iter().all(|r| r.crb.len() == 1 && r.p_miss_theory.is_some()));
        assert!(out.summary.exact_count_frequency.unwrap() >= 0.5);

        let dir = tempfile::tempdir().unwrap();
        write_results(dir.path(), &cfg, &out).unwrap();
        let mut rd = csv::Reader::from_path(dir.path().join("trials.csv")).unwrap();
        assert_eq!(rd.records().count(), 6);
        let schema: Vec<serde_json::Value> =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("schema.json")).unwrap()).unwrap();
        let header = csv::Reader::from_path(dir.path().join("trials.csv")).unwrap().headers().unwrap().clone();
        assert_eq!(schema.len(), header.len());
    }

    #[test]
    fn summary_ignores_record_order() {
        let cfg = ExperimentConfig::from_json(SINGLE).unwrap();
        let out = run_experiment(&cfg).unwrap();
        let mut rev = out.records.clone();
        rev.reverse();
        assert_eq!(summarize(&rev), out.summary);
    }

    #[test]
    fn failing_trials_are_recorded() {
        // a spacing that cannot fit in the domain fails every draw
        let doc = SINGLE.replace(
            r#"{"rule": "random", "count": 1, "tau_s": 5e-9}"#,
            r#"{"rule": "pair", "spacing": {"distance": 1000.0}}"#,
        );
        let cfg = ExperimentConfig::from_json(&doc).unwrap();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), 6);
        assert_eq!(out.summary.failed, 6);
        assert!(out.records.iter().all(|r| r.status == TrialStatus::Failed && r.error.is_some()));
    }
}
