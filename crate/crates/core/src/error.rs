use thiserror::Error;

use crate::field::SolveDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("constraint value {value} at t = {time} lies outside [{lower}, {upper}]")]
    ConstraintBounds {
        value: f64,
        time: f64,
        lower: f64,
        upper: f64,
    },

    #[error("initial datum is infeasible: |Lu0| exceeds the bound by {excess:e}")]
    Infeasible { excess: f64 },

    #[error("initial datum violates the Dirichlet condition (max boundary value {max_boundary:e})")]
    NotDirichlet { max_boundary: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("Newton did not converge at t = {time} after {halvings} time-step halvings (residual {:e})", diagnostics.final_residual)]
    NonConvergence {
        time: f64,
        halvings: usize,
        diagnostics: Box<SolveDiagnostics>,
    },

    #[error("penalized solve failed in stage eps = {eps}, delta = {delta}: {source}")]
    Stage {
        eps: f64,
        delta: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("linear system is not positive definite (pivot {pivot:e} at row {row})")]
    Singular { row: usize, pivot: f64 },

    #[error("unsupported structure: {0}")]
    Unsupported(String),

    #[error("history is empty but t = {0} > 0")]
    EmptyHistory(f64),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
