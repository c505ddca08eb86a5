use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("projection to the domain failed at {point:?} (g = {value})")]
    ProjectionFailed { point: Vec<f64>, value: f64 },

    #[error("bundle carries no tangents")]
    MissingTangents,

    #[error("mask weights sum to zero")]
    DegenerateMask,

    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),

    #[error("least-squares system is singular")]
    SingularSystem,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("simulation step failed: {dropped} of {total} projection points dropped")]
    TooManyDropped { dropped: usize, total: usize },

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),

    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
