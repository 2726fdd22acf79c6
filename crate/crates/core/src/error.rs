use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("infeasible marginals: sum(L) = {sum_l}, sum(W) = {sum_w}")]
    InfeasibleMarginals { sum_l: f64, sum_w: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("state space too large: more than {limit} feasible states")]
    StateSpaceTooLarge { limit: usize },

    #[error("no route for OD pair {0}")]
    NoRouteForOd(usize),

    #[error("route enumeration exceeded {limit} routes for OD pair {od}")]
    RouteExplosion { od: usize, limit: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("infeasible path flow: {0}")]
    InfeasibleFlow(String),

    #[error("edge flow vector is not attainable by any feasible path flow (residual {residual:e})")]
    Unattainable { residual: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } => 2,
            Error::NonConvergence { .. } => 3,
            _ => 4,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
