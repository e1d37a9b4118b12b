//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("Gram matrix is singular even after jitter escalation")]
    SingularGram,

    #[error("hyperparameter fitting failed: {0}")]
    FittingFailed(String),

    #[error("invalid client count {0}")]
    InvalidClientCount(usize),

    #[error("doubly-stochastic repair did not converge (residual {residual:.3e} after {iters} iterations)")]
    RepairFailed { residual: f64, iters: usize },

    #[error("consensus round stalled: {0}")]
    StalledRound(String),

    #[error("design point outside bounds in coordinate {coord}: {value} not in [{lo}, {hi}]")]
    OutOfBounds {
        coord: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("run aborted for client {client} at iteration {iteration}: {source}")]
    RunAborted {
        client: usize,
        iteration: usize,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
