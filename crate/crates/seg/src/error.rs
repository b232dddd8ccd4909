use std::path::PathBuf;

use octa_core::TaskName;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] octa_core::Error),
    #[error("tensor op failed: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset not found: {0}")]
    DatasetNotFound(PathBuf),
    #[error("corrupt sample {id}: {reason}")]
    CorruptSample { id: String, reason: String },
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("sample {id} has no {task} label")]
    MissingLabel { id: String, task: TaskName },
    #[error("model already carries LoRA adapters")]
    AlreadyAdapted,
    #[error("model has no LoRA adapters")]
    NotAdapted,
    #[error("input side {got} does not match model side {expected}")]
    InputSide { expected: usize, got: usize },
    #[error("prompt point {index} at ({x}, {y}) lies outside the {side}x{side} input")]
    PointOutOfBounds { index: usize, x: u32, y: u32, side: usize },
    #[error("incompatible checkpoint\n  expected: {expected}\n  found:    {found}")]
    IncompatibleCheckpoint { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
