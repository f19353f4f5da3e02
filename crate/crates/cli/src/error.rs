use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;

/// Command failure, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, missing or inconsistent input data.
    #[error("{0}")]
    Data(String),
    /// A broken internal invariant.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<dsfcn::Error> for CliError {
    fn from(e: dsfcn::Error) -> Self {
        use dsfcn::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => CliError::Usage(msg),
            E::MissingFile(_)
            | E::DimensionMismatch { .. }
            | E::IllegalGreyLevel { .. }
            | E::Io { .. }
            | E::Image { .. }
            | E::Csv { .. }
            | E::Format(_)
            | E::UndefinedCdr
            | E::UndefinedAuc(_) => CliError::Data(msg),
            E::Grad(_) | E::Shape { .. } | E::Contract(_) => CliError::Internal(msg),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
