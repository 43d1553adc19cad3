use thiserror::Error;

/// Errors raised anywhere in the registration toolkit.
#[derive(Debug, Error)]
pub enum RegError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("unsupported or corrupt image: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A documented input contract was violated (e.g. a non-binary image
    /// handed to a binary morphology operator).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("no consensus: best model supported by {best} correspondences")]
    NoConsensus { best: usize },

    #[error("config error: {0}")]
    Config(String),
}

impl RegError {
    /// True for the error classes that mark a registration as "failed"
    /// rather than aborting a run.
    pub fn is_fit_failure(&self) -> bool {
        matches!(
            self,
            RegError::InsufficientData { .. } | RegError::Degenerate(_) | RegError::NoConsensus { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, RegError>;
