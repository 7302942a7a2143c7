//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("unknown identifier `{name}` at byte {position}")]
    UnknownIdentifier { name: String, position: usize },

    #[error("variable x{index} out of range: declared dimension is {dimension}")]
    VariableOutOfRange { index: usize, dimension: usize },

    #[error("manifest error in field `{field}`: {message}")]
    Manifest { field: String, message: String },

    #[error("basis is numerically singular: |det| = {det:.3e} below floor {floor:.3e}")]
    SingularBasis { det: f64, floor: f64 },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("invalid criterion parameters: {0}")]
    InvalidCriterion(String),

    #[error("operation unsupported for this measure variant: {0}")]
    Unsupported(String),

    #[error("quadrature failed to converge: {0}")]
    NonConverged(String),

    #[error("density evaluated negative beyond round-off at {point:?}: {value}")]
    NegativeMass { point: Vec<f64>, value: f64 },

    #[error("Gram matrix singular at degree {degree}")]
    SingularGram { degree: usize },

    #[error("sup-norm sequence unbounded at degree {degree}")]
    Unbounded { degree: usize },

    #[error("cone support required: {0}")]
    ConeMismatch(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
