use std::path::Path;

use thiserror::Error;

/// Failures surfaced to the user, each with a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, missing or malformed input files.
    #[error("{0}")]
    Usage(String),
    /// Divergence, singular matrices and other numeric breakdowns.
    #[error("{0}")]
    Numeric(String),
    /// Failure to write outputs.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<flowlda::Error> for CliError {
    fn from(err: flowlda::Error) -> Self {
        if err.is_numeric() {
            CliError::Numeric(err.to_string())
        } else if let flowlda::Error::Io(e) = err {
            CliError::Io(e.to_string())
        } else {
            CliError::Usage(err.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Errors reading a named input: a missing file is a usage error that
/// names the path.
pub fn read_error(path: &Path, err: flowlda::Error) -> CliError {
    match err {
        flowlda::Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => {
            CliError::Usage(format!("input file not found: {}", path.display()))
        }
        flowlda::Error::Io(e) => CliError::Io(format!("{}: {e}", path.display())),
        other if other.is_numeric() => CliError::Numeric(format!("{}: {other}", path.display())),
        other => CliError::Usage(format!("{}: {other}", path.display())),
    }
}
