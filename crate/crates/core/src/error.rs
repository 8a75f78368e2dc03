use thiserror::Error;

use crate::mean_field::NonConvergenceReport;

pub type Result<T> = std::result::Result<T, MfgError>;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("semigroup evaluation overflowed at t = {t}")]
    GeneratorOverflow { t: f64 },

    #[error("Riccati solution blew up (norm {norm:.3e}) at reversed time s = {s}; horizon too long")]
    HorizonTooLong { s: f64, norm: f64 },

    #[error("solver instability in {what} at grid index {index}: {detail}")]
    SolverInstability {
        what: &'static str,
        index: usize,
        detail: String,
    },

    #[error("fixed-point iteration did not converge after {} iterations (last residual {:.3e})", .0.iterations, .0.last_residual())]
    NonConvergence(Box<NonConvergenceReport>),

    #[error("contraction certificate fails even at T = {t_min:.3e} (T_max = {t_max})")]
    InfeasibleModel { t_min: f64, t_max: f64 },

    #[error("simulation blew up for agent {agent} at step {step}")]
    SimulationBlowUp { agent: usize, step: usize },

    #[error("invalid coupled-system spec: {0}")]
    InvalidSpec(String),

    #[error("index {index} out of range (len {len}) in {context}")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        len: usize,
    },

    #[error("model validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MfgError {
    pub(crate) fn dims(context: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        MfgError::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
