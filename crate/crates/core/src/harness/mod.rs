//! Experiment configuration, seeded repeated runs, CSV summaries, the
//! oracle cross-check suite and the schedule calculator.

mod checks;
mod config;
mod experiment;
mod schedule;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::estimators::EstimatorError;
use crate::mdp::MdpError;
use crate::optimizers::OptimizerError;

pub use checks::{
    dp_checks, havr_checks, negative_control, run_oracle_suite, schedule_checks, solver_grid_checks,
    subspace_equivalence_checks, truncation_checks, unbiasedness_checks, variance_checks, CheckResult, OracleReport,
    OracleScope, CORRUPTED_FIXTURE,
};
pub use config::{EvalSetting, ExperimentConfig, MdpSource, ScheduleMode};
pub use experiment::{
    crossing, interpolate_return, run_experiment, run_repeats, summarize, summary_from_csv, summary_to_csv,
    ExperimentOutput, RepeatResult, SummaryRow, SUMMARY_HEADER,
};
pub use schedule::{parse_constants, schedule_calc, ScheduleReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{source_name}:{line}: {message}")]
    Config { source_name: String, line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}
