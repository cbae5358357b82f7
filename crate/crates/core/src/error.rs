use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed manifest: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("duplicate subject `{0}`")]
    DuplicateSubject(String),

    #[error("duplicate sequence `{sequence}` in subject `{subject}`")]
    DuplicateSequence { subject: String, sequence: String },

    #[error("sequence `{sequence}`: frame_count is {declared} but {dir} holds {found} frame files")]
    FrameCountMismatch {
        sequence: String,
        dir: PathBuf,
        declared: usize,
        found: usize,
    },

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("{path}: cannot decode image: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("sequence too short: {0}")]
    TooShort(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unsupported protocol: {0}")]
    Protocol(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
