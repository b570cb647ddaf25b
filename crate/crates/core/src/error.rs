use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("rank {rank} out of range 0..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("normalizing integral diverges ({0})")]
    DivergentNormalizer(&'static str),

    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    SolverDidNotConverge { iterations: usize, grad_norm: f64 },

    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },

    #[error("non-finite gradient at epoch {epoch}, step {step}")]
    NonFiniteGradient { epoch: usize, step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated file {path}: needed {needed} bytes, found {found}")]
    TruncatedFile { path: PathBuf, needed: usize, found: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("config error at line {line}, column {column}: {message}")]
    Config {
        message: String,
        line: usize,
        column: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(context: &'static str, expected: impl std::fmt::Display, found: impl std::fmt::Display) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
