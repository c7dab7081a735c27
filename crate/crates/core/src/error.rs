use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value while evaluating {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("nonpositive resource: {0}")]
    NonPositiveResource(f64),

    #[error("singular matrix ({0})")]
    Singular(&'static str),

    #[error("ill-conditioned jacobian: condition number {0:.3e} exceeds {1:.1e}")]
    IllConditioned(f64, f64),

    #[error("zero gradient: {0}")]
    ZeroGradient(&'static str),

    #[error("zero weight vector; use the degenerate fallback (f~ = f(theta~))")]
    ZeroWeights,

    #[error("parameter {index} has nonzero gradient but received no resource (infinite variance)")]
    InfiniteVariance { index: usize },

    #[error("all {0} trials were degenerate")]
    AllDegenerate(usize),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Format(String),
}

impl Error {
    /// Stable machine-readable tag for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonPositiveResource(_) => "nonpositive_resource",
            Error::Singular(_) => "singular",
            Error::IllConditioned(..) => "ill_conditioned",
            Error::ZeroGradient(_) => "zero_gradient",
            Error::ZeroWeights => "zero_weights",
            Error::InfiniteVariance { .. } => "infinite_variance",
            Error::AllDegenerate(_) => "all_degenerate",
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
