use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The score provider could not produce a prediction. Training steps that
    /// hit this are skipped and retried.
    #[error("guidance unavailable: {0}")]
    GuidanceUnavailable(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("insufficient frames: need at least 3, got {0}")]
    InsufficientFrames(usize),

    #[error("invalid feature: {0}")]
    InvalidFeature(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI for its stderr payload.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Shape(_) => "shape",
            Error::Range(_) => "range",
            Error::Config(_) => "config",
            Error::GuidanceUnavailable(_) => "guidance_unavailable",
            Error::DegenerateModel(_) => "degenerate_model",
            Error::InsufficientFrames(_) => "insufficient_frames",
            Error::InvalidFeature(_) => "invalid_feature",
            Error::Numerical(_) => "numerical",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }
}
