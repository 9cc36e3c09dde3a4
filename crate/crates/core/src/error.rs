use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index out of range in {op}: {index} (limit {limit})")]
    OutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("interval [{start}, {end}) rejected: {reason}")]
    Interval {
        start: usize,
        end: usize,
        reason: String,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("AUC undefined: labels contain {positives} positives and {negatives} negatives")]
    UndefinedAuc { positives: usize, negatives: usize },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("frame {index} ({path}): {reason}")]
    Frame {
        index: usize,
        path: PathBuf,
        reason: String,
    },

    #[error("checksum mismatch for frame {index} ({path})")]
    Checksum { index: usize, path: PathBuf },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("adapter: {0}")]
    Adapter(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
