use thiserror::Error;

#[derive(Debug, Error)]
pub enum FbError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("infeasible pilot plan: {streams} streams cannot be orthogonal with a pool of {pool}")]
    InfeasiblePlan { streams: usize, pool: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("numeric failure in {context}: {detail}")]
    NumericFailure { context: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FbError>;
