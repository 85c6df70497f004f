//! Experiment orchestration: configuration, bounds, metrics and result files.

pub mod config;
pub mod crb;
pub mod experiment;
pub mod io;
pub mod metrics;

pub use config::{DmcShape, ExperimentConfig, MetricsConfig, FULL_SCALE_TRIALS};
pub use crb::{crb, fisher_information, fisher_information_numeric, ComponentCrb};
pub use experiment::{run_experiment, summarize, write_results, ExperimentOutput, RateEstimate, Summary, TrialRecord, TrialStatus};
pub use metrics::{classify_events, ospa_associate, EventFlags, OspaResult, OspaSettings, PairError};
