use fqm_core::FqmError;
use std::fmt;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or parameter values. Exit 1.
    Usage(String),
    /// Unreadable or malformed input, failed writes. Exit 2.
    Data(String),
    /// An estimator or solver could not produce a result. Exit 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<FqmError> for CliError {
    fn from(e: FqmError) -> Self {
        let msg = e.to_string();
        match e {
            FqmError::InvalidParameter(_) | FqmError::InvalidConfig(_) | FqmError::Unsupported(_) => {
                CliError::Usage(msg)
            }
            FqmError::Degenerate(_) => CliError::Numerical(msg),
            FqmError::NegativeDuration(_)
            | FqmError::EmptySample(_)
            | FqmError::TooFewSamples { .. }
            | FqmError::MissingColumn(_)
            | FqmError::Io(_)
            | FqmError::Csv(_) => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
