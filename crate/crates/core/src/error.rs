//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enumeration.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution or model parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Vector/matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A categorical draw was requested with no finite-probability outcome.
    #[error("empty support: all outcomes have zero probability")]
    EmptySupport,

    /// The posterior being sampled from has numerically zero mass.
    #[error("impossible evidence: {0}")]
    ImpossibleEvidence(String),

    /// Conditioning left a duration posterior with no mass.
    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    /// Auxiliary-variable augmentation cannot proceed.
    #[error("degenerate augmentation: {0}")]
    DegenerateAugmentation(String),

    /// A sampler configuration value is out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A rejection loop exceeded its hard cap.
    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    /// An argument is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
