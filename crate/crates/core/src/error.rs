use std::path::PathBuf;

use thiserror::Error;

use crate::env::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid environment:\n{0}")]
    InvalidEnvironment(ValidationReport),

    #[error("linear program is infeasible ({0})")]
    Infeasible(String),

    #[error("linear program is unbounded ({0})")]
    Unbounded(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("enumeration refused: {0}")]
    CapExceeded(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::InvalidEnvironment(_)
            | Error::CapExceeded(_)
            | Error::Parse { .. } => 2,
            Error::Infeasible(_) | Error::Unbounded(_) | Error::SolverFailure(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}
