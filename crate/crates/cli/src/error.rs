use std::path::Path;

use serde::de::DeserializeOwned;
use yume_kit::motion::TrajectoryError;

#[derive(Debug)]
pub enum CliError {
    Parse { kind: String, message: String },
    Validation { kind: String, message: String },
    Internal(String),
}

impl CliError {
    pub fn parse(kind: &str, message: String) -> Self {
        CliError::Parse {
            kind: kind.into(),
            message,
        }
    }

    pub fn validation(kind: &str, message: String) -> Self {
        CliError::Validation {
            kind: kind.into(),
            message,
        }
    }

    pub fn internal(message: String) -> Self {
        CliError::Internal(message)
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse { .. } => 2,
            CliError::Validation { .. } => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Parse { kind, message } | CliError::Validation { kind, message } => {
                (kind.as_str(), message.as_str())
            }
            CliError::Internal(m) => ("Internal", m.as_str()),
        };
        serde_json::json!({ "error": kind, "message": message, "exit_code": self.exit_code() })
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        if e.is_parse_error() {
            CliError::parse(e.kind(), e.to_string())
        } else {
            CliError::validation(e.kind(), e.to_string())
        }
    }
}

/// Validation error named after the error enum variant.
pub fn invalid<E: std::fmt::Debug + std::fmt::Display>(e: E) -> CliError {
    let debug = format!("{e:?}");
    let kind: String = debug.chars().take_while(|c| c.is_alphanumeric()).collect();
    CliError::validation(&kind, e.to_string())
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::parse("IoError", format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::parse("ParseError", format!("{}: {e}", path.display())))
}
