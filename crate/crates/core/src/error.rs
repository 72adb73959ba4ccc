use thiserror::Error;

/// Errors raised across the certification pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("eigenvalue iteration did not converge")]
    NoConvergence,

    #[error("resource guard exceeded: {what} = {count} exceeds limit {limit}")]
    ResourceGuard {
        what: &'static str,
        count: u128,
        limit: u128,
    },

    #[error("simplex iteration limit of {0} reached")]
    IterationLimit(u64),

    #[error("internal consistency violated: {0}")]
    Inconsistent(String),

    #[error("markov chain is reducible: {0}")]
    Reducible(String),

    #[error("no rational occupancy approximation within {tolerance}: best deviation {deviation} at denominator {denominator}")]
    Rounding {
        deviation: f64,
        denominator: u32,
        tolerance: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
