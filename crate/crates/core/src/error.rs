use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inconsistent map data: {0}")]
    Inconsistent(String),
    #[error("not a simple disk triangulation: {0}")]
    NotDiskTriangulation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("insufficient window: {0}")]
    InsufficientWindow(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("domain too small: {0}")]
    DomainTooSmall(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
