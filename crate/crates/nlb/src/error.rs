//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zero row {row}: L2 norm {norm:e} is below 1e-12, direction undefined")]
    ZeroRow { row: usize, norm: f64 },

    #[error("embedding matrix is not normalized; call normalize_rows first")]
    NotNormalized,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("index {index} out of range for {n} samples")]
    IndexOutOfRange { index: usize, n: usize },

    #[error(
        "no cluster holds at least {budget} samples (largest has {largest}); \
         use a smaller poison budget M or a smaller cluster count k"
    )]
    NoEligibleCluster { budget: usize, largest: usize },

    #[error("subset enumeration guard exceeded: C({n},{m}) = {count} > {limit}")]
    CombinatorialGuard {
        n: usize,
        m: usize,
        count: u128,
        limit: u128,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Stable machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidInput(_) => "invalid_input",
            Error::ZeroRow { .. } => "zero_row",
            Error::NotNormalized => "not_normalized",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::NoEligibleCluster { .. } => "no_eligible_cluster",
            Error::CombinatorialGuard { .. } => "combinatorial_guard",
            Error::Json(_) => "json",
        }
    }
}
