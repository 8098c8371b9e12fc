use std::fmt;

use cbam_pad::Error;

pub const SUCCESS: u8 = 0;
pub const USAGE: u8 = 1;
pub const CONTRACT: u8 = 2;
pub const DATA: u8 = 3;

/// A message plus the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: USAGE, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: DATA, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Usage(_) | Error::Config(_) => USAGE,
            Error::Contamination(_) => CONTRACT,
            Error::Dimension { .. }
            | Error::Manifest { .. }
            | Error::Decode { .. }
            | Error::Checkpoint(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Io(_) => DATA,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}
