//! Crate-wide error type.

/// Errors produced by detkit operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation's contract (shape mismatch, bad parameter).
    #[error("contract violation: {0}")]
    Contract(String),
    /// An internal invariant failed (e.g. excessive imaginary residue after an
    /// inverse DFT, which signals a broken transform rather than bad input).
    #[error("internal consistency: {0}")]
    Internal(String),
    /// Malformed external data (tensor files, box records, config text).
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn malformed(msg: impl Into<String>) -> Error {
    Error::Malformed(msg.into())
}
