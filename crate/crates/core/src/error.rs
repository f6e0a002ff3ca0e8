use thiserror::Error;

/// Errors produced by the accountant, schedule builders, models and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation is not defined for this model or configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A schedule spends more than its budget.
    #[error("infeasible schedule: consumes {consumed} R-units of a {budget} budget")]
    Infeasible { consumed: f64, budget: f64 },

    /// Influence estimation could not produce a fit.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
