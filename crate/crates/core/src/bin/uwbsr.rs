use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use uwbsr::estimator::{run_estimation, ModelContext};
use uwbsr::harness::io::{load_observation, save_observation};
use uwbsr::harness::{run_experiment, write_results, ExperimentConfig, FULL_SCALE_TRIALS};
use uwbsr::noise::build_structured_covariance;
use uwbsr::threshold::{deflection, excursion_constant_q, kappa_star, threshold_table, ThresholdRow, ThresholdSpec};
use uwbsr::{Error, Result};

#[derive(Parser)]
#[command(name = "uwbsr", version, about = "Specular multipath detection and estimation in dense multipath")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one synthetic observation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Estimate the components of an observation file.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the excursion constant and the threshold for a target false-detection probability.
    Threshold {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epsilon: f64,
        /// Extra thresholds to tabulate.
        #[arg(long, value_delimiter = ',')]
        kappa: Vec<f64>,
    },
    /// Run a Monte-Carlo study and write CSV/JSON results.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Use the full-scale trial count.
        #[arg(long, conflicts_with = "trials")]
        full: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Serialize)]
struct ThresholdReport {
    #[serde(flatten)]
    spec: ThresholdSpec,
    /// Deflection of the first component of trial 0, if any.
    deflection: Option<f64>,
    table: Vec<ThresholdRow>,
}

fn truth_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".truth.json");
    out.with_file_name(name)
}

fn simulate(config: &Path, out: &Path, trial: u64) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let sim = cfg.simulator()?;
    let obs = sim.draw_observation(trial)?;
    let model = &sim.ctx.model;
    save_observation(out, &obs.y, model.n_freq(), model.n_ant())?;
    std::fs::write(truth_path(out), serde_json::to_string_pretty(&obs.truth)?)?;
    Ok(())
}

fn estimate(config: &Path, obs: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    if cfg.estimator.eta_known && cfg.estimator.eta.is_none() {
        return Err(Error::Config("estimate needs estimator.eta when eta_known is set".into()));
    }
    let ctx = cfg.context()?;
    let (y, n, m) = load_observation(obs).map_err(|e| Error::Config(format!("{}: {e}", obs.display())))?;
    if (n, m) != (ctx.model.n_freq(), ctx.model.n_ant()) {
        return Err(Error::Config(format!(
            "observation is {n} x {m}, configuration expects {} x {}",
            ctx.model.n_freq(),
            ctx.model.n_ant()
        )));
    }
    let ctx = ModelContext::new(ctx.model.with_wideband(cfg.estimator.wideband), ctx.domain);
    let result = run_estimation(&y, &cfg.estimator, &ctx)?;
    std::fs::write(out, serde_json::to_string_pretty(&result.to_record())?)?;
    Ok(())
}

fn threshold(config: &Path, epsilon: f64, kappas: &[f64]) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let sim = cfg.simulator()?;
    let obs = sim.draw_observation(0)?;
    let eta = cfg.estimator.eta.unwrap_or_else(|| sim.eta(&obs.truth));
    let model = sim.ctx.model.with_wideband(cfg.estimator.wideband);
    let cov = build_structured_covariance(&eta, &model.spectrum, model.n_ant(), &sim.ctx.domain)?;
    let q = excursion_constant_q(&model, &cov, cfg.estimator.q_delay_range)?;
    let spec = kappa_star(epsilon, q)?;
    let defl = obs.truth.components.first().map(|_| {
        let (psi, alpha) = (obs.truth.dispersion()[0], obs.truth.amplitudes()[0]);
        deflection(alpha, &psi, &model, &cov)
    });
    let mut ks = vec![spec.kappa_star];
    ks.extend_from_slice(kappas);
    let report = ThresholdReport {
        spec,
        deflection: defl,
        table: threshold_table(q, defl.unwrap_or(0.0), &ks),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn evaluate(config: &Path, out: &Path, trials: Option<usize>, full: bool, threads: Option<usize>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if full {
        cfg.metrics.trials = FULL_SCALE_TRIALS;
    }
    if let Some(t) = trials {
        cfg.metrics.trials = t;
    }
    if threads.is_some() {
        cfg.metrics.threads = threads;
    }
    cfg.validate()?;
    let output = run_experiment(&cfg)?;
    write_results(out, &cfg, &output)?;
    println!("{}", serde_json::to_string_pretty(&output.summary)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, out, trial } => simulate(config, out, *trial),
        Command::Estimate { config, obs, out } => estimate(config, obs, out),
        Command::Threshold { config, epsilon, kappa } => threshold(config, *epsilon, kappa),
        Command::Evaluate {
            config,
            out,
            trials,
            full,
            threads,
        } => evaluate(config, out, *trials, *full, *threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uwbsr: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
