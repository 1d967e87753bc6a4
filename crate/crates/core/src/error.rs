use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("unsupported image format for {path} (expected PNG or JPEG)")]
    UnsupportedFormat { path: PathBuf },

    #[error("invalid resize target {height}x{width}: both dimensions must be positive and divisible by 4")]
    InvalidTarget { height: usize, width: usize },

    #[error("image is in {found} range, expected {expected}")]
    WrongRangeMode {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("input {height}x{width} is not divisible by the coarsest branch factor {factor}")]
    IndivisibleInput { height: usize, width: usize, factor: usize },

    #[error("scale mismatch: {0}")]
    ScaleMismatch(String),

    #[error("unknown extractor layer `{0}`")]
    UnknownLayer(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("channel mismatch: {left} vs {right}")]
    ChannelMismatch { left: usize, right: usize },

    #[error("missing features for layer `{0}`")]
    MissingLayer(String),

    #[error("image {height}x{width} is too small (need at least {min}x{min})")]
    TooSmall { height: usize, width: usize, min: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("feature extractor unavailable: {0}")]
    ExtractorUnavailable(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
