use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = VgotError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VgotError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },

    #[error("step {step} out of range 1..={max}")]
    Range { step: usize, max: usize },

    #[error("scheduling error: {0}")]
    Schedule(String),

    #[error("non-finite value in {0}")]
    Numeric(&'static str),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("completion for shot {shot} is missing domain `{domain}`")]
    Schema { shot: usize, domain: &'static str },

    #[error("state error: {0}")]
    State(String),

    #[error("llm transport error{}: {message}", shot.map(|s| format!(" (shot {s})")).unwrap_or_default())]
    Transport { shot: Option<usize>, message: String },

    #[error("tensor format error: {0}")]
    Format(String),

    #[error("tensor payload truncated: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<VgotError>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl VgotError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VgotError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        VgotError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Transport and filesystem failures map to exit code 2, everything else to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            VgotError::Io { .. } | VgotError::Transport { .. } => 2,
            VgotError::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
