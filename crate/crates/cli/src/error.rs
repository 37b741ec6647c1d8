use std::fmt;

use chive::error::ErrorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Usage,
    Validation,
    Numeric,
}

impl Failure {
    pub fn exit_code(self) -> i32 {
        match self {
            Failure::Usage => 1,
            Failure::Validation => 2,
            Failure::Numeric => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Failure::Usage => "usage",
            Failure::Validation => "validation",
            Failure::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub failure: Failure,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            failure: Failure::Usage,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            failure: Failure::Validation,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            failure: Failure::Numeric,
            message: message.into(),
        }
    }

    /// One-line JSON object written to stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.failure.name(),
                "exit_code": self.failure.exit_code(),
                "message": self.message,
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<chive::Error> for CliError {
    fn from(e: chive::Error) -> Self {
        let failure = match e.kind() {
            ErrorKind::Numeric => Failure::Numeric,
            ErrorKind::Validation | ErrorKind::Io => Failure::Validation,
        };
        CliError {
            failure,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::validation(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
