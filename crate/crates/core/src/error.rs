use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two inputs disagree on a dimension.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Path enumeration would exceed the configured cap.
    #[error("path count {count} exceeds cap {cap} (Delannoy bound for a {tau}x{tau_prime} plan)")]
    Capacity {
        count: u128,
        cap: u128,
        tau: usize,
        tau_prime: usize,
    },

    /// The band leaves no admissible path between the corners.
    #[error("no admissible warping path for a {tau}x{tau_prime} plan under the band")]
    Infeasible { tau: usize, tau_prime: usize },

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
