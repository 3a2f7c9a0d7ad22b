use crate::prelude::*;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("malformed knot sequence: {0}")]
    Knots(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error(
        "quadrature on [{a}, {b}] did not reach tolerance within {subdivisions} subdivisions \
         (estimated error {error:e})"
    )]
    Quadrature {
        a: f64,
        b: f64,
        subdivisions: usize,
        error: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("sampler failure: {0}")]
    Sampler(String),
    #[error("requested {requested} posterior draws but only {available} are available")]
    InsufficientDraws { requested: usize, available: usize },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("{0}")]
    Evaluation(String),
}

pub type Result<T> = core::result::Result<T, Error>;
