use thiserror::Error;

/// Errors surfaced by the index, estimators, optimizers and the query engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite or invalid value: {0}")]
    InvalidValue(String),
    #[error("no records in query range")]
    EmptyRange,
    #[error("cannot split a height-1 decomposition unit")]
    LeafLevel,
    #[error("sample probability must be positive")]
    InvalidProbability,
    #[error("child ranges do not tile the parent range")]
    RangeMismatch,
    #[error("phase-0 budget too small for the initial decomposition")]
    BudgetExhausted,
    #[error("spike ranges overlap or are out of bounds")]
    InvalidSpikes,
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("sample cap exceeded without reaching the confidence target")]
    Diverged,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
