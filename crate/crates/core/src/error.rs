use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GuslError>;

#[derive(Debug, Error)]
pub enum GuslError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("images are identical (zero MSE)")]
    IdenticalImages,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("incompatible model: {0}")]
    IncompatibleModel(String),
    #[error("corrupt model data: {0}")]
    Corruption(String),
    #[error("unsupported or malformed file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl GuslError {
    /// Short machine-readable category, used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            GuslError::InvalidDimension(_) => "invalid-dimension",
            GuslError::Shape(_) => "shape",
            GuslError::InvalidConfig(_) => "invalid-config",
            GuslError::InvalidInput(_) => "invalid-input",
            GuslError::InsufficientData(_) => "insufficient-data",
            GuslError::IdenticalImages => "identical-images",
            GuslError::NumericalFailure(_) => "numerical-failure",
            GuslError::InvalidModel(_) => "invalid-model",
            GuslError::IncompatibleModel(_) => "incompatible-model",
            GuslError::Corruption(_) => "corruption",
            GuslError::Format(_) => "format",
            GuslError::Io(_) => "io",
            GuslError::Json(_) => "json",
            GuslError::Csv(_) => "csv",
        }
    }
}
