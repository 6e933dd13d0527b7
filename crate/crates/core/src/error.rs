use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state {state} is below the initial state {n0}")]
    StateBelowInitial { state: u64, n0: u64 },

    #[error("rate λ({state}, {jump}) is undefined: {reason}")]
    RateUndefined {
        state: u64,
        jump: usize,
        reason: String,
    },

    #[error(
        "rate sum at state {state} shows no decay after {terms} terms; \
         the rates must be summable for unbounded jumps"
    )]
    DivergentRates { state: u64, terms: usize },

    #[error("pattern budget exceeded: |Θ| = {count} exceeds the limit {limit}")]
    PatternBudget { count: u128, limit: u128 },

    #[error(
        "rates are too close for partial fractions (gap {gap:e} below {tolerance:e}); \
         use the general series kernel"
    )]
    NearDegenerate { gap: f64, tolerance: f64 },

    #[error(
        "series tail could not be certified below {target:e} within {terms} terms \
         (partial value {partial}, bound {bound:e})"
    )]
    TailNotCertified {
        partial: f64,
        bound: f64,
        target: f64,
        terms: usize,
    },

    #[error("quadrature did not converge: estimate {value}, error {error:e}")]
    Quadrature { value: f64, error: f64 },

    #[error("solver unstable at t = {time}: p({state}) = {value}; reduce the step")]
    Unstable { time: f64, state: u64, value: f64 },

    #[error("grid unsuitable: {0}")]
    Grid(String),

    #[error("formula error at column {column}: {message}")]
    Formula { column: usize, message: String },

    #[error("model document: {0}")]
    Document(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
