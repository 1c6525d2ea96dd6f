//! Error type shared by all engines.

/// Errors surfaced by validation, engines, and the oracle.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input rejected at validation time (non-finite values, bad probabilities, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Argument outside the operation's domain (e.g. t = 0).
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numerical failure during iteration (NaN/divergent objective).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Oracle refused an instance that exceeds its desk-scale guards.
    #[error("oracle refused: {0}")]
    OracleRefused(String),

    /// A synchronous-round protocol violation (missing message).
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, Error>;
