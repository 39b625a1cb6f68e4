use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("mask dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("expected {expected} cells, got {actual}")]
    BufferLength { expected: usize, actual: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("structuring element must contain the origin")]
    MissingOrigin,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("curve centerline never intersects the {width}x{height} canvas")]
    CurveOutsideCanvas { width: usize, height: usize },
    #[error("invalid curve: {0}")]
    InvalidCurve(&'static str),
    #[error("invalid noise spec: {0}")]
    InvalidNoise(&'static str),
    #[error("invalid generator config: {0}")]
    InvalidConfig(&'static str),
    #[error("no patches supplied")]
    NoPatches,
    #[error("patch has zero area")]
    EmptyPatch,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("box side length must be at least 2, got {0}")]
    BoxTooSmall(usize),
    #[error("IoU threshold must lie in [0, 1], got {0}")]
    InvalidIouThreshold(f64),
    #[error("box contains no set pixel")]
    EmptyBox,
    #[error("requested {requested} negative prompts but only {available} background pixels exist")]
    InsufficientBackground { requested: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuidanceError {
    #[error("alpha-bar must lie in (0, 1], got {0}")]
    NonPositiveAlpha(f64),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("loss term slot `{0}` is not filled")]
    MissingSlot(&'static str),
    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("non-finite value in tensor")]
    NonFinite,
    #[error("denoiser failed: {0}")]
    Denoiser(String),
    #[error("loss provider failed: {0}")]
    Provider(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("label index is empty")]
    EmptyIndex,
    #[error("severity {0} is outside 0..=3")]
    InvalidSeverity(u8),
    #[error("every draw for {disease} landed on an empty severity cell (last tried severity {severity})")]
    EmptyCell { disease: &'static str, severity: u8 },
    #[error("job references unknown image id `{0}`")]
    UnknownImage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(String),
    #[error("score {value} at index {index} is outside [0, 1]")]
    ScoreOutOfRange { index: usize, value: String },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

impl SegError {
    /// Only transport failures are worth retrying.
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Transport(_))
    }
}
