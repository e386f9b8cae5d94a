//! crate-wide error type
//!
//! One enum for the whole library; variants carry enough context to tell a
//! malformed file apart from a geometry bug or an undefined statistic.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed or unsupported NIfTI content (bad size field, magic,
    /// datatype, truncated payload, ...).
    #[error("nifti: {0}")]
    Nifti(String),

    /// CSV parse/shape problems for patient tables and feature matrices.
    #[error("tabular: {0}")]
    Tabular(String),

    /// Two volumes that must share a grid do not.
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    /// Array/matrix dimensions that do not line up (feature width vs model,
    /// prediction vs truth lengths, ...).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A caller-supplied value is out of range or inconsistent.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Synthetic cohort generation could not satisfy its constraints.
    #[error("phantom: {0}")]
    Phantom(String),

    /// A statistic has no defined value on the given input (no comparable
    /// pairs, empty sets, ...).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// (De)serialization of models/checkpoints failed.
    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
