use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("filter divergence: {0}")]
    Divergence(String),
    #[error("interceptor and target positions coincide")]
    Coincident,
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trajectory generation failed: {0}")]
    Generation(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("tuning error: {0}")]
    Tuning(String),
    #[error("QP solver did not converge after {iterations} iterations")]
    NotConverged { best_effort: [f64; 3], iterations: usize },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
