use std::path::Path;

use msbprune::error::DataError;
use thiserror::Error;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or values detected after argument parsing.
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    /// A cross-check between independent models failed.
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error(transparent)]
    Core(msbprune::Error),
}

impl From<msbprune::Error> for CliError {
    fn from(e: msbprune::Error) -> Self {
        match e {
            msbprune::Error::Data(d) => CliError::Data(d),
            msbprune::Error::Prune(p) => CliError::Config(p.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl From<msbprune::error::AccelError> for CliError {
    fn from(e: msbprune::error::AccelError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Assertion(_) => 4,
            CliError::Core(_) => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        let kind = source.kind();
        CliError::Data(DataError::Io(std::io::Error::new(
            kind,
            format!("{}: {source}", path.display()),
        )))
    }
}

pub type CliResult<T> = Result<T, CliError>;
