use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit.
///
/// `is_input_error` separates caller mistakes (bad arguments, malformed
/// files) from internal failures; the CLI maps the two to distinct exit codes.
#[derive(Debug, Error)]
pub enum MeterError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("frame {frame}: value {value} outside [0, 1]")]
    ActivationRange { frame: usize, value: f64 },
    #[error("unknown tala '{name}' (registered: {registered})")]
    UnknownTala { name: String, registered: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl MeterError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        MeterError::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MeterError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_input_error(&self) -> bool {
        !matches!(self, MeterError::Internal(_))
    }
}

pub type Result<T, E = MeterError> = std::result::Result<T, E>;
