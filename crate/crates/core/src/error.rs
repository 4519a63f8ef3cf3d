use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("field is not real: max imaginary part {imag:.3e} exceeds {limit:.3e}")]
    NotReal { imag: f64, limit: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
