use thiserror::Error;

use crate::metrics::ConstraintReport;
use crate::scenario::StarCoefficients;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("matched filter is undefined: the target chain vector is zero")]
    DegenerateFilter,

    #[error("no feasible STAR-RIS candidate recovered ({} violations in best candidate)", .report.violations.len())]
    RecoveryFailure {
        candidate: Box<StarCoefficients>,
        report: Box<ConstraintReport>,
    },

    #[error("scenario is infeasible: {0}")]
    InfeasibleScenario(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
