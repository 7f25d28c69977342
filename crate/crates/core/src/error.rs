use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("invalid dual: {0}")]
    InvalidDual(String),
    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("instance too large for exhaustive enumeration ({labelings} labelings exceed {limit})")]
    TooLarge { labelings: f64, limit: f64 },
    #[error("linear program {0}")]
    Lp(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
