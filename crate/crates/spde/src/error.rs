//! Crate-wide error type.

/// Errors reported by construction, validation and simulation routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent sizes, grids or experiment descriptions.
    #[error("configuration error: {0}")]
    Config(String),

    /// Cholesky failed even at the jitter ceiling.
    #[error(
        "factorization failed: most negative eigenvalue {min_eigenvalue:e} \
         exceeds the jitter ceiling {ceiling:e}"
    )]
    Factorization { min_eigenvalue: f64, ceiling: f64 },

    /// A trajectory produced non-finite values or left the configured bounds.
    #[error("divergence at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    /// Pathwise comparison across different noise realizations was refused.
    #[error("noise realization mismatch: {0}")]
    NoiseMismatch(String),

    /// Not enough usable data points for a rate fit.
    #[error("rate fit error: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
