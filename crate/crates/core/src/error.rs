//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by grid, dispersion, solver and harness operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("symbol is not finite at xi = {xi:?}")]
    NonFiniteSymbol { xi: Vec<f64> },
    #[error("resonance: {0}")]
    Resonance(String),
    #[error("carrier k/eps = {carrier} is not a multiple of 2*pi/L; nearest representable eps: {below} or {above}")]
    CarrierNotRepresentable { carrier: f64, below: f64, above: f64 },
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("numerical breakdown: {0}")]
    Breakdown(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
