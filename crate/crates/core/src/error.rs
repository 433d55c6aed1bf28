use thiserror::Error;

use crate::qp::QpStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("prosumer {prosumer}: elastic budget {total} kWh is outside [{min}, {max}] reachable with the per-slot bounds")]
    InfeasibleElasticBudget {
        prosumer: usize,
        total: f64,
        min: f64,
        max: f64,
    },

    #[error("prosumer {prosumer}: {reason}")]
    InvalidProsumer { prosumer: usize, reason: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid QP: {0}")]
    InvalidQp(String),

    #[error("QP backend rejected the problem: {0}")]
    Backend(String),

    #[error("{context}: solver finished with status {status:?}")]
    SolverFailed { context: String, status: QpStatus },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input data rather than a solver breakdown.
    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            Error::LengthMismatch { .. }
                | Error::InfeasibleElasticBudget { .. }
                | Error::InvalidProsumer { .. }
                | Error::InvalidScenario(_)
                | Error::InvalidConfig(_)
                | Error::InvalidQp(_)
                | Error::Json(_)
        )
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
