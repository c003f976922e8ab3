use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0} out of range")]
    OutOfRange(String),

    #[error("no object to view")]
    NoObject,

    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("no valid pixels: {0}")]
    Empty(String),

    #[error("negative loss: {0}")]
    NegativeLoss(f64),

    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("manifest not found in {0}")]
    ManifestNotFound(PathBuf),

    #[error("unsupported dataset version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed {what}: {path}")]
    Malformed { path: PathBuf, what: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, what: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            what: what.into(),
        }
    }
}
