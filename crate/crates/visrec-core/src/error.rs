use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid image: {0}")]
    Image(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Diverged { epoch: usize, batch: usize },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("index error: {0}")]
    Index(String),

    #[error("unknown item id: {0}")]
    UnknownId(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("out-of-order event: seq {seq} after {last}")]
    OutOfOrder { seq: u64, last: u64 },

    #[error("unknown vetting key: {0}")]
    UnknownVettingKey(String),

    #[error("unknown BISS name: {0}")]
    UnknownBiss(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("service error: {0}")]
    Service(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
