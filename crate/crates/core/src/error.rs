use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("stream cache mismatch: {0}")]
    CacheMismatch(String),

    #[error("format error in {} at byte {offset}: {reason}", path.as_ref().map_or_else(|| "<buffer>".into(), |p| p.display().to_string()))]
    Format {
        path: Option<PathBuf>,
        offset: u64,
        reason: String,
    },

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    TrainingDiverged { epoch: usize, step: usize, loss: f64 },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::InvalidShape(msg.into())
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }

    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a file path to a format error produced while decoding a buffer.
    pub(crate) fn in_file(self, file: impl Into<PathBuf>) -> Self {
        match self {
            Error::Format {
                path: None,
                offset,
                reason,
            } => Error::Format {
                path: Some(file.into()),
                offset,
                reason,
            },
            other => other,
        }
    }

    pub fn is_format(&self) -> bool {
        matches!(self, Error::Format { .. })
    }
}
