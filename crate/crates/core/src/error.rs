use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate triangle {index} (signed area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite (smallest eigenvalue {smallest:e})")]
    NotPositiveDefinite { smallest: f64 },

    #[error("factorization failed: nonpositive pivot {pivot:e} at row {row}")]
    Factorization { row: usize, pivot: f64 },

    #[error("eigensolver did not converge after {iterations} iterations (last residuals {residuals:?})")]
    NonConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("eigensolve for group {group} failed: {source}")]
    GroupSolve {
        group: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("group {group} is degenerate (Gram eigenvalue {smallest:e}); re-retract the state")]
    DegenerateState { group: usize, smallest: f64 },

    #[error("continuation stage {stage} failed: {source}")]
    StageFailed {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("line search stagnated at step {step:e} after {iterations} iterations")]
    Stagnation { step: f64, iterations: usize },

    #[error("mask of group {group} has {available} interior vertices, {needed} required")]
    MaskTooSmall {
        group: usize,
        available: usize,
        needed: usize,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
