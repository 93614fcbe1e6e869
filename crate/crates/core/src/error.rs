use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigErrors;
use crate::solver::{SolveReport, StepParams};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{function} is undefined at {value}")]
    Domain { function: &'static str, value: f64 },

    #[error("infeasible state: theta^{mode} = {value} at point {point}")]
    InfeasibleState { mode: usize, point: usize, value: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("Newton did not converge at {params}: {reason}")]
    NonConvergence {
        params: StepParams,
        reason: String,
        report: Box<SolveReport>,
    },

    #[error("linear solve failed at {params}: {detail}")]
    LinearSolve { params: StepParams, detail: String },

    #[error("{0}")]
    Config(ConfigErrors),

    #[error("unknown canonical configuration `{0}`")]
    UnknownCanonical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the nonlinear or linear solver.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::LinearSolve { .. }
                | Error::InfeasibleState { .. }
                | Error::Domain { .. }
        )
    }
}
