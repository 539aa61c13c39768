//! Experiment runner behind the `fedlab` binary.
//!
//! [`config`] maps TOML files onto core types; [`commands`] executes them and
//! builds the reports printed on stdout.

pub mod commands;
pub mod config;
pub mod report;

use fedlab_core::FedError;
use thiserror::Error;

pub use commands::{compare, oracle, run, write_atomic, RunOptions, SEED_ENV};
pub use config::{ExperimentConfig, Prepared};
pub use report::{CompareRow, RunReport};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad key, value or combination in a configuration file.
    #[error("config error: {0}")]
    Config(String),

    #[error("run diverged at round {round} (objective {objective:e})")]
    Divergence { round: usize, objective: f64 },

    #[error("{0}")]
    Core(FedError),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    /// Process exit status: 2 for configuration errors, 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence { .. } => 3,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }
}

impl From<FedError> for CliError {
    fn from(e: FedError) -> Self {
        match e {
            FedError::Configuration(msg) => CliError::Config(format!("{msg} (see the compatibility table in README.md)")),
            FedError::Parameter(_) | FedError::Topology(_) => CliError::Config(e.to_string()),
            FedError::Divergence { round, objective } => CliError::Divergence { round, objective },
            other => CliError::Core(other),
        }
    }
}
