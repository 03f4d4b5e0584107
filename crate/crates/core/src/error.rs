use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("term set is not real in the computational basis: {0}")]
    ComplexOperator(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("system size N = {n} exceeds the dense limit of {limit} sites")]
    TooLarge { n: usize, limit: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("empty energy window around {center} with half-width {half_width}")]
    EmptyWindow { center: f64, half_width: f64 },

    #[error("{0}")]
    NonConvergence(Box<crate::vqa::NonConvergence>),

    #[error("spectrum file: {0}")]
    SpectrumFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
