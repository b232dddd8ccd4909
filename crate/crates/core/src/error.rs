use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected_width}x{expected_height}, got {width}x{height}")]
    ShapeMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },
    #[error("grid data length {len} does not match {width}x{height}")]
    BadGridLength { width: usize, height: usize, len: usize },
    #[error("input too small: {width}x{height}, both sides must be at least {min}")]
    InputTooSmall { width: usize, height: usize, min: usize },
    #[error("unknown projection layer `{requested}`; available layers: {available:?}")]
    UnknownLayer { requested: String, available: Vec<String> },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sample `{id}` is corrupt: {reason}")]
    CorruptSample { id: String, reason: String },
    #[error("mask has no foreground pixels to sample positive prompts from")]
    NoForeground,
    #[error("cannot standardize prompts: mask has no background pixels")]
    CannotStandardize,
    #[error("{what} is not binary: found value {value}")]
    NonBinary { what: &'static str, value: f64 },
    #[error("need at least {k} ids for {k} folds, got {n}")]
    NotEnoughIds { n: usize, k: usize },
    #[error("step {step} is outside 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("local mode is only valid for artery and vein, not {0}")]
    LocalModeUnsupported(&'static str),
}
