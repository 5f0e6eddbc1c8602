use thiserror::Error;

use crate::engine::ConvergenceReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible grids: {0}")]
    IncompatibleGrid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("value {value} at node {node} is below -{tol} (not in the cone)")]
    NotInCone { node: usize, value: f64, tol: f64 },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("monotonicity violated at step {step}, node {node} (excess {excess:e})")]
    Monotonicity { step: usize, node: usize, excess: f64 },

    #[error("no convergence after {iterations} iterations (last step {last_step:e})")]
    NonConvergence {
        iterations: usize,
        last_step: f64,
        report: Box<ConvergenceReport>,
    },

    #[error("degenerate result: {0}")]
    Degenerate(String),

    #[error("theorem violation: {0}")]
    TheoremViolation(String),

    #[error("operator construction failed: {0}")]
    Construction(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that mean a hypothesis or certificate did not hold,
    /// as opposed to a run that simply did not converge.
    pub fn is_certification(&self) -> bool {
        matches!(
            self,
            Error::Certification(_)
                | Error::Precondition(_)
                | Error::Monotonicity { .. }
                | Error::Degenerate(_)
                | Error::TheoremViolation(_)
                | Error::NotInCone { .. }
        )
    }
}
