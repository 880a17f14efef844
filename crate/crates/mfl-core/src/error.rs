//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Hurst parameter {0} outside (1/2, 1)")]
    InvalidHurst(f64),

    #[error("negative time argument {0}")]
    NegativeTime(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("grid size {n} exceeds cap {cap} for {what}")]
    GridTooLarge { n: usize, cap: usize, what: &'static str },

    #[error("hypergeometric series did not reach tolerance {tol} within {max_terms} terms (partial sum {partial}, last term {last})")]
    SeriesDiverged { tol: f64, max_terms: usize, partial: f64, last: f64 },

    #[error("circulant embedding has negative eigenvalue {min_eigenvalue}; fall back to Cholesky")]
    NegativeCirculantEigenvalue { min_eigenvalue: f64 },

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),

    #[error("state blew up at step {step} (|state| = {norm})")]
    BlowUp { step: usize, norm: f64 },

    #[error("fast scale under-resolved: {0}")]
    UnderResolved(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty sample")]
    EmptySample,

    #[error("Monte Carlo estimate did not converge: {0}")]
    NotConverged(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
