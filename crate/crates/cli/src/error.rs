use std::fmt;
use std::path::Path;

use effalign::bridge::BridgeError;
use effalign::Error;

/// A failure reported as a single `error[code]: message` line.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        if self.code == "usage" {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.code, crate::config::one_line(&self.message))
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Schema(_) | Error::Catalog(_) => "schema",
            Error::UnknownAttribute(_) | Error::UnknownQuestion(_) | Error::UnknownCountry(_) => "data",
            Error::MalformedRow { .. } | Error::Csv(_) => "data",
            Error::EmptySupport { .. } => "support",
            Error::InvalidDistribution(_) | Error::LengthMismatch { .. } | Error::InvalidArgument(_) => "invalid",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::Bridge(_) => "bridge",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        };
        Self::new(code, e.to_string())
    }
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        Self::new("bridge", e.to_string())
    }
}
