use std::fmt;

use air_core::Error;

pub const SUCCESS: u8 = 0;
pub const RUNTIME: u8 = 1;
pub const VALIDATION: u8 = 2;
pub const RESOURCE: u8 = 3;

/// A failure carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: VALIDATION,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: RUNTIME,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidConfig { .. } | Error::InvalidSpec(_) | Error::Checkpoint(_) | Error::Precondition(_) => {
                VALIDATION
            }
            Error::Budget { .. } => RESOURCE,
            Error::Shape { .. } | Error::NonFinite { .. } | Error::Contract(_) | Error::NotReady { .. } | Error::Io(_) => {
                RUNTIME
            }
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
