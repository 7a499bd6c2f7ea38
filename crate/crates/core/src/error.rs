use thiserror::Error;

use crate::solver::SolverState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range for {n} blocks")]
    IndexOutOfRange { index: usize, n: usize },

    /// A coordinate would never be updated.
    #[error("sampling is not proper: block {index} has inclusion probability {prob}")]
    ImproperSampling { index: usize, prob: f64 },

    #[error("problem is not strongly convex: {0}")]
    NotStronglyConvex(String),

    #[error("degenerate step-size formula: {0}")]
    Degenerate(String),

    #[error("step plan is not certified; certify it or run with an explicit override")]
    Uncertified,

    #[error("iterates diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_finite: Box<SolverState>,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("ill-posed instance: {0}")]
    IllPosed(String),

    #[error("enumeration of {count} items exceeds the budget of {budget}")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error("integer overflow: {0}")]
    Overflow(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}
