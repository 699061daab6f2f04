use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text (JSON that does not parse, unreadable image bytes).
    #[error("parse error: {0}")]
    Parse(String),

    /// Input parsed but violates a structural invariant of the record format.
    #[error("structural error: {0}")]
    Structural(String),

    /// Incompatible or insufficient configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than by a bug or the environment.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Structural(_)
                | Error::Config(_)
                | Error::Precondition(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Image(_)
                | Error::Checkpoint(_)
        )
    }
}
