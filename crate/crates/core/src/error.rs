use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unknown video id {0:?} (not present in the metadata file)")]
    UnknownVideo(String),

    #[error("checkpoint version mismatch: file has version {found}, reader supports {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("checkpoint checksum mismatch (file truncated or corrupted)")]
    CheckpointChecksum,

    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("non-finite value in feature {feature} at frame {frame}")]
    NonFiniteFeature { feature: String, frame: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("class id {0} out of range [0, {1})")]
    ClassOutOfRange(usize, usize),

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
