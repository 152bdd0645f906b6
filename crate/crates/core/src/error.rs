use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular {what} (reciprocal condition {rcond:.3e} below threshold)")]
    Singular { what: &'static str, rcond: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rate targets unattainable at any power for pairs {0:?}")]
    PairsInfeasible(Vec<usize>),

    #[error("numerical breakdown in LP solver: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
