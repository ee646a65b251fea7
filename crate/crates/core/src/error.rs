use thiserror::Error;

/// Errors raised by problem construction, the solvers and the oracles.
#[derive(Debug, Error)]
pub enum UotError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what}[{index}] = {value} must be strictly positive")]
    NonPositive {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{what}[{index}] = {value} must be nonnegative and finite")]
    Negative {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("measures are not balanced: totals {alpha} and {beta} differ")]
    UnbalancedTotals { alpha: f64, beta: f64 },

    #[error("measures must lie on the probability simplex (total {total}); normalize the inputs")]
    NotNormalized { total: f64 },

    #[error("{0}")]
    Degenerate(String),

    #[error("solver diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: u64, reason: String },

    #[error("LP pivot limit of {limit} exceeded")]
    PivotLimit { limit: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, UotError>;
