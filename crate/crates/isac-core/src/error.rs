//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the ISAC toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum IsacError {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates a structural invariant.
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A squint trajectory needs a larger delay span than the TTD hardware offers.
    #[error("TTD range exceeded: trajectory needs {required_s:.6e} s but t_max is {t_max_s:.6e} s")]
    TtdRangeExceeded { required_s: f64, t_max_s: f64 },

    /// A hardware constraint (delay bound, unit modulus, power) is violated.
    #[error("constraint violated: {0}")]
    Constraint(String),

    /// The Fisher information is singular on the parameter space.
    #[error("Fisher information is rank deficient (rank {rank} of {dim}); CRB is infinite")]
    InfiniteCrb { rank: usize, dim: usize },

    /// The scene produces an all-zero quantity that must be normalised.
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    /// Frame timing leaves no room for data transmission.
    #[error("infeasible timing: {0}")]
    InfeasibleTiming(String),
}

/// Convenience alias.
pub type Result<T> = std::result::Result<T, IsacError>;

impl IsacError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        IsacError::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        IsacError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
