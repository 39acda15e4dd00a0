//! Error type shared across the pipeline stages.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point behind camera: Z = {z}")]
    PointBehindCamera { z: f64 },

    #[error("degenerate box height: h = {h}")]
    DegenerateBoxHeight { h: f64 },

    #[error("non-positive depth: z = {z}")]
    NonPositiveDepth { z: f64 },

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("invalid bounding box: w = {w}, h = {h}")]
    InvalidBox { w: f64, h: f64 },

    #[error("detections span multiple frames: found frame {found}, expected {expected}")]
    MixedFrames { expected: u64, found: u64 },

    #[error("invalid confidence {value} (must lie in [0, 1])")]
    InvalidConfidence { value: f64 },

    #[error("{0} must not be empty")]
    EmptyInput(&'static str),

    #[error("sample parameter values must be strictly increasing (t[{index}] = {value})")]
    NonMonotoneParameter { index: usize, value: f64 },

    #[error("missing required prompt role `{role}` in score record (clip {clip_id}, frame {frame})")]
    MissingPrompt {
        role: &'static str,
        clip_id: String,
        frame: u64,
    },

    #[error("verdicts span multiple clips: found `{found}`, expected `{expected}`")]
    MixedClips { expected: String, found: String },

    #[error("unknown label `{label}`; known labels: {known:?}")]
    UnknownLabel { label: String, known: Vec<String> },

    #[error("length mismatch: {left} predictions vs {right} truth entries")]
    LengthMismatch { left: usize, right: usize },

    #[error("trajectories share no common frames")]
    NoCommonFrames,

    #[error("invalid noise config: {0}")]
    InvalidNoiseConfig(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("trajectory leaves the valid frustum at frame {frame} (Z = {z})")]
    Frustum { frame: u64, z: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
