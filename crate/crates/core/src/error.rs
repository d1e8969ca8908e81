use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure in {what} after {iterations} iterations")]
    Numerical {
        what: &'static str,
        iterations: usize,
    },

    #[error("rank {rank} exceeds the budget {budget}")]
    RankOverflow { rank: usize, budget: usize },

    #[error("theory not applicable: {0}")]
    InapplicableTheory(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("insufficient history: need {needed} steps of lookback, trajectory spans {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
