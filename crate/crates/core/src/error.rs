use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("problem infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge: {reason} (max violation {max_violation:.3e}, gap {gap:.3e})")]
    NoConvergence {
        reason: String,
        max_violation: f64,
        gap: f64,
    },

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
