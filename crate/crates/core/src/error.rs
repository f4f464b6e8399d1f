use thiserror::Error;

/// Error type shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weights sum to {sum:e}, expected 1 within 1e-12")]
    NotNormalized { sum: f64 },

    #[error("negative weight {value:e} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("kernel row {row} sums to {sum:e}, expected 1 within 1e-12")]
    NotStochastic { row: usize, sum: f64 },

    #[error("measure must have full support, weight 0 at state {index}")]
    ZeroSupport { index: usize },

    #[error("level sequence inconsistent at level {level}: {detail}")]
    InconsistentSequence { level: usize, detail: String },

    #[error("all resampling weights are zero (total potential collapse)")]
    DegenerateWeights,

    #[error("kernel is not reversible w.r.t. the given measure (max detailed-balance error {max_err:e})")]
    NotReversible { max_err: f64 },

    #[error("infeasible constants: {inequality} violated")]
    Infeasible { inequality: String },

    #[error("state space of size {states} exceeds the dense-matrix budget of {budget}")]
    CapacityExceeded { states: usize, budget: usize },

    #[error("{aborted} of {total} replications aborted with degenerate weights (> 1% tolerated)")]
    TooManyAborts { aborted: u64, total: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
