use thiserror::Error;

/// Error kinds surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// An argument is outside the operation's domain (e.g. non-power-of-two size).
    #[error("invalid argument: {0}")]
    Arg(String),

    /// An inconsistent model/training configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed dataset bytes (bad magic, truncation, count mismatch).
    #[error("format error: {0}")]
    Format(String),

    /// Data is out of range for its contract (e.g. label outside the class set).
    #[error("data error: {0}")]
    Data(String),

    /// A required resource is missing and cannot be produced.
    #[error("unavailable: {0}")]
    Availability(String),

    /// Downloaded bytes do not match their published checksum.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// An API was called outside its contract (e.g. backward on a non-scalar).
    #[error("usage error: {0}")]
    Usage(String),

    /// Training produced a non-finite loss or gradient.
    #[error("divergence: {0}")]
    Diverged(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
