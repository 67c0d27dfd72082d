use std::io;
use std::path::{Path, PathBuf};

/// Every fallible operation in the crate reports through this type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }
}
