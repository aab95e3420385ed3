use std::path::PathBuf;

use thiserror::Error;

use crate::sdp::SolveStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("trailing block is singular or indefinite (min eigenvalue {min_eig:e})")]
    SingularBlock { min_eig: f64 },

    #[error("pair (A, B) is not stabilizable: uncontrollable mode with |lambda| = {modulus}")]
    NotStabilizable { modulus: f64 },

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("input vector field vanishes at x = {x}")]
    Uncontrollable { x: f64 },

    #[error("solver returned {status:?}")]
    Solve { status: SolveStatus },

    #[error("certificate violated inside its guaranteed region: {0}")]
    TheoremViolation(String),

    #[error("domain sampling produced unbounded values: {0}")]
    DomainTooLarge(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Solver status carried by the error, if the failure came from a solve.
    pub fn solve_status(&self) -> Option<SolveStatus> {
        match self {
            Error::Solve { status } => Some(*status),
            _ => None,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
