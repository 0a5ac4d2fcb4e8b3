//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the engine, from file IO to shape
/// mismatches to numerical breakdown.
#[derive(Error, Debug)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed or truncated file contents (bad magic, version, counts).
    #[error("format error: {0}")]
    Format(String),

    /// Tensor/matrix dimensions incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Only the (m, r) = (2, 3) Winograd configuration is implemented.
    #[error("unsupported winograd configuration m={m}, r={r}")]
    UnsupportedSpec { m: usize, r: usize },

    /// Low-rank width outside 1..=t^3, or factor shapes inconsistent.
    #[error("rank error: {0}")]
    Rank(String),

    /// A column mask must keep at least one of the t^3 positions.
    #[error("mask keeps zero columns")]
    EmptyMask,

    /// Non-finite values or a numerical routine that failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A forward cache was replayed against a layer or gradient it does not match.
    #[error("cache error: {0}")]
    Cache(String),

    /// Dataset construction or consumption failed.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid hyperparameters or option combinations.
    #[error("config error: {0}")]
    Config(String),

    /// An internal equivalence check failed; results would not be trustworthy.
    #[error("validation error: {0}")]
    Validation(String),

    /// Input is degenerate for the requested analysis (e.g. all-zero spectrum).
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
