use thiserror::Error;

/// Errors raised while building or truncating chains.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel must have at least one state")]
    Empty,
    #[error("dense data has {len} entries, expected {expected}")]
    ShapeMismatch { len: usize, expected: usize },
    #[error("row {row} references column {col} outside 0..{n}")]
    ColumnOutOfRange { row: usize, col: usize, n: usize },
    #[error("state set is empty")]
    EmptyStateSet,
    #[error("state {state} is outside the truncation 0..{n}")]
    StateOutOfRange { state: usize, n: usize },
    #[error("row {row} of the skip-free chain puts mass {mass} on state {col} >= row + 2")]
    NotSkipFree { row: usize, col: usize, mass: f64 },
    #[error("up-probability p({row},{next}) is zero; the chain must be able to move up", next = row + 1)]
    ZeroUpProbability { row: usize },
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("chain has only {available} explicit rows, {requested} requested")]
    RowsExhausted { available: usize, requested: usize },
    #[error("increment distribution: {0}")]
    InvalidIncrement(String),
    #[error("kernel failed validation: {0}")]
    Invalid(String),
    #[error("truncation size must be at least {min}, got {got}")]
    TruncationTooSmall { min: usize, got: usize },
}

/// Errors from the monotone solver and the transforms built on it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("iterates exceeded the ceiling {ceiling:e} at state {state} after {iterations} iterations (solution is infinite)")]
    Diverged {
        state: usize,
        iterations: usize,
        ceiling: f64,
    },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// Errors from criteria that refuse their input.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriterionError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("search exhausted: {0}")]
    SearchExhausted(String),
}
