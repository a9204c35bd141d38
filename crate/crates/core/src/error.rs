use thiserror::Error;

/// Errors produced by the simulator and its calculators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("no connected Erdos-Renyi graph after {attempts} attempts (n = {n}, prob = {prob})")]
    ConnectivityRetriesExhausted { n: usize, prob: f64, attempts: usize },

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not doubly stochastic (max row/column deviation {0:.3e})")]
    NotDoublyStochastic(f64),

    #[error("mixing matrix does not mix: consensus rate p = {0:.3e} is outside (0, 1]")]
    NoMixing(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
