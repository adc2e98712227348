//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument fell outside its valid range.
    #[error("{name} = {value} outside [{lo}, {hi}]")]
    Domain {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    /// Mixture density is a point mass and cannot be differentiated.
    #[error("degenerate density: all active components have zero variance")]
    DegenerateDensity,

    #[error("unknown condition label `{0}`")]
    UnknownCondition(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("zero-variance input where spread is required")]
    ZeroVariance,

    #[error("undefined direction: point at the origin")]
    UndefinedDirection,

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
