//! Experiment engine behind the `simulate` binary.
//!
//! A JSON [`ExperimentConfig`] names one experiment family, the system
//! dimensions and the master seed. [`run_experiment`] expands it into seeded
//! Monte Carlo trials and summarizes them as [`ResultRow`]s (mean and
//! standard error per metric and sweep point). Trial `i` at sweep point `s`
//! draws from `derive_seed(master, [fnv1a(id), s, i])`, so results do not
//! depend on scheduling.

mod config;
mod experiments;
mod metrics;
mod output;

use std::path::PathBuf;

pub use config::{
    BoChannel, BoConfig, ExperimentConfig, ExperimentKind, Method, OptimizerConfig, SensingConfig,
};
pub use experiments::{run_experiment, ExperimentOutput};
pub use metrics::{mean_stderr, metric_detection, metric_wpt_zeta, DetectionRates};
pub use output::{
    emit, emit_raw, format_sig, round_sig, write_raw, write_rows, OutputFormat, RawRecord, ResultRow,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Sim(#[from] crate::Error),
}
