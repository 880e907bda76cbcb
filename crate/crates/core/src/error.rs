use thiserror::Error;

/// Errors produced anywhere in the prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("invalid t-maze spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite activation in model output")]
    NonFiniteActivation,

    #[error("density underflow at step {step}")]
    DegenerateDensity { step: usize },

    #[error("training diverged at epoch {epoch}")]
    DivergedTraining { epoch: usize },

    #[error("horizon {requested} exceeds cap {cap}")]
    HorizonTooLong { requested: usize, cap: usize },

    #[error("every particle is an outlier")]
    AllOutliers,

    #[error("degenerate heatmap grid: {0}")]
    DegenerateGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
