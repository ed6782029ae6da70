use thiserror::Error;

/// Errors raised anywhere in the estimation and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at step {step}, asset {asset}")]
    NonFinite { step: usize, asset: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("lag {lag} out of range for history of {len} steps")]
    LagOutOfRange { lag: i64, len: usize },

    #[error("missing lags on flow grid: {0:?}")]
    MissingLags(Vec<usize>),

    #[error("numerically degenerate: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Degenerate(_) => 3,
            Error::Config(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
