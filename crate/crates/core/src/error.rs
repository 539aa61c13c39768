//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FedError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FedError {
    /// An argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// An iterative kernel did not converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// An algorithm, problem and topology combination is not supported.
    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("state error: {0}")]
    State(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("divergence at round {round}: objective {objective:e}")]
    Divergence { round: usize, objective: f64 },
}

impl FedError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        FedError::Parameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        FedError::Dimension(msg.into())
    }
}
