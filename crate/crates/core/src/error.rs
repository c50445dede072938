use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("affine coordinate is {value}, expected 1")]
    NotAffine { value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("trajectory is not contiguous at transition {index}")]
    Discontiguous { index: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("quadratic program infeasible: {0}")]
    Infeasible(String),

    #[error("quadratic program solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("buffer format: {0}")]
    Format(String),

    #[error("malformed row {row}: {reason} (last good row: {last_good})")]
    MalformedRow {
        row: usize,
        last_good: usize,
        reason: String,
    },

    #[error("unsupported buffer version `{0}`")]
    Version(String),

    #[error(transparent)]
    Transport(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
