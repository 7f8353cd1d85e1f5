use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: [usize; 3],
        actual: [usize; 3],
    },
    #[error("spacing mismatch: expected {expected:?}, got {actual:?}")]
    SpacingMismatch { expected: [f64; 3], actual: [f64; 3] },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index {index} out of range 0..{len}")]
    OutOfRange { index: usize, len: usize },
    #[error("lesion count must be at least 1, got {0}")]
    NoLesions(usize),
    #[error("could not place lesion {lesion} inside the brain after {attempts} attempts")]
    LesionPlacement { lesion: usize, attempts: usize },
    #[error("subgroup {subgroup} has {available} entries, fewer than the {requested} requested for test")]
    SubgroupTooSmall {
        subgroup: String,
        available: usize,
        requested: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { loss: f64, epoch: usize, step: usize },
    #[error("{path}: bad magic")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated ({detail})")]
    Truncated { path: PathBuf, detail: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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
}
