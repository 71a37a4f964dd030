use std::path::PathBuf;

/// Errors produced anywhere in the fall-detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed WAV file {path}: {reason}")]
    MalformedWav { path: PathBuf, reason: String },

    #[error("unsupported WAV encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },

    #[error("clip has {len} samples, longer than target length {target}")]
    ClipTooLong { len: usize, target: usize },

    #[error("category {0} has no clips")]
    EmptyCategory(u8),

    #[error("duplicate path in corpus: {0}")]
    DuplicatePath(String),

    #[error("unknown category id {0}")]
    UnknownCategory(u8),

    #[error("transform `{transform}` is restricted to no-fall clips")]
    ScopeViolation { transform: String },

    #[error("parameter `{name}` of `{transform}` out of range: {value}")]
    ParamOutOfRange {
        transform: String,
        name: String,
        value: f64,
    },

    #[error("unknown transform `{0}`")]
    UnknownTransform(String),

    #[error("augmentation plan is empty")]
    EmptyPlan,

    #[error("segment of {segment} samples exceeds clip length {len}")]
    SegmentTooLong { segment: usize, len: usize },

    #[error("diff features need at least 2 frames, got {0}")]
    TooFewFrames(usize),

    #[error("FFT size {0} must be a power of two no larger than 65536")]
    InvalidFftSize(usize),

    #[error("feature matrices do not come from the same clip: {0}")]
    ClipMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    DivergedTraining { epoch: usize, reason: String },

    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,

    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("test split has no clips of category {0}")]
    MissingCategory(u8),

    #[error("SMO did not converge after {passes} passes")]
    NonConvergence { passes: usize },

    #[error("stream underrun: {0}")]
    StreamUnderrun(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("alert dispatch failed after {attempts} attempts: {reason}")]
    DispatchFailed { attempts: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {context}: {reason}")]
    Parse { context: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
