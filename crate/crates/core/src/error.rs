use std::path::PathBuf;

use crate::solvers::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular tensor (reciprocal condition {rcond:e})")]
    SingularTensor { rcond: f64 },

    #[error("singular dense system: {0}")]
    SingularSystem(String),

    #[error("inner solver failure: {0}")]
    SolverFailure(String),

    #[error("solver did not converge within {} iterations", report.iterations)]
    NotConverged { report: Box<SolveReport> },

    #[error("Uzawa step too large: duality gap increased for {consecutive} consecutive iterations")]
    StepTooLarge { consecutive: usize, report: Box<SolveReport> },

    #[error("homogenized tensor is not symmetric (relative asymmetry {asymmetry:e})")]
    AsymmetricResult { asymmetry: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// The solver report attached to a convergence failure, if any.
    pub fn report(&self) -> Option<&SolveReport> {
        match self {
            Error::NotConverged { report } | Error::StepTooLarge { report, .. } => Some(report),
            _ => None,
        }
    }
}
