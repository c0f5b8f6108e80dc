use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector must have at least one element")]
    EmptyVector,

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("l2 norm {0} does not fit in a 32-bit float")]
    NormOverflow(f64),

    #[error("invalid bit-width {0}")]
    InvalidBitWidth(u32),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("allocation uses {used} bits but the budget is {budget}")]
    OverBudget { used: u64, budget: u64 },

    #[error("budget must be even, got {0}")]
    OddBudget(u64),

    #[error("budget {budget} exceeds 8 bits per element for d = {len}")]
    BudgetTooLarge { budget: u64, len: usize },

    #[error("variance bound is undefined for the zero vector")]
    ZeroVector,

    #[error("exhaustive search supports d <= {max}, got {len}")]
    SearchTooLarge { len: usize, max: usize },

    #[error("invalid annealing parameters: {0}")]
    InvalidParams(String),

    #[error("aggregation needs at least one update")]
    NoUpdates,

    #[error("malformed encoded update: {0}")]
    Decode(String),

    #[error("round {round}, client {client}: non-finite {what}")]
    Diverged {
        round: usize,
        client: usize,
        what: &'static str,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("cannot partition: {0}")]
    Partition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("malformed metrics: {0}")]
    Metrics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
