use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A Hermitian block expected to be positive definite was not.
    #[error("block {index} is not positive definite")]
    NotPositiveDefinite { index: usize },

    #[error("singular matrix (condition estimate {condition:.3e}): {context}")]
    Singular { context: String, condition: f64 },

    /// A quadratic form that must be strictly positive vanished.
    #[error("non-positive quadratic form in {context}: {value:.3e}")]
    NonPositiveQuadratic { context: String, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
