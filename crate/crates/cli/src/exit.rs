//! Error type of the command layer and its exit codes.

use kreinmap_core::Error;
use thiserror::Error as ThisError;

pub const OK: i32 = 0;
pub const INTERNAL: i32 = 1;
pub const REJECTED: i32 = 2;
pub const INPUT: i32 = 3;
pub const NO_CONVERGENCE: i32 = 4;

#[derive(Debug, ThisError)]
pub enum CliError {
    /// The input is well formed but mathematically unacceptable.
    #[error("{0}")]
    Rejected(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("{0}")]
    NoConvergence(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Rejected(_) => REJECTED,
            CliError::Input(_) => INPUT,
            CliError::NoConvergence(_) => NO_CONVERGENCE,
            CliError::Output(_) | CliError::Internal(_) => INTERNAL,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NotAccelerant { .. } | Error::Singular { .. } | Error::SupportLeak { .. } => {
                CliError::Rejected(msg)
            }
            Error::NoConvergence { .. } => CliError::NoConvergence(msg),
            Error::InvalidGrid(_)
            | Error::Shape(_)
            | Error::NonFinite(_)
            | Error::NotOffDiagonal(_)
            | Error::Invalid(_) => CliError::Input(msg),
        }
    }
}
