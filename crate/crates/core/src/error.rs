use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// A stored activation pattern no longer matches the network weights.
    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("infeasible buffer: {0}")]
    InfeasibleBuffer(String),

    #[error("verification error: {0}")]
    Verification(String),

    #[error("environment error: {0}")]
    Env(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
