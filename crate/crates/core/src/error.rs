use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the alignment library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing token file: {0}")]
    MissingTokenFile(PathBuf),

    #[error("bad magic in {path}: expected \"NRTN\"")]
    BadMagic { path: PathBuf },

    #[error("truncated token file {path}: expected {expected} payload bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("rows * dim overflows in {path} ({rows} x {dim})")]
    SizeOverflow { path: PathBuf, rows: u32, dim: u32 },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("manifest parse error: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-monotone timestamps in video {video}: {detail}")]
    NonMonotoneTimestamps { video: String, detail: String },

    #[error("zero row at index {0}")]
    ZeroRow(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("marginal mismatch: {0}")]
    MarginalMismatch(String),

    #[error("numerical breakdown in sinkhorn after {iterations} iterations")]
    NumericalBreakdown { iterations: usize },

    #[error("reference sinkhorn did not converge: marginal error {error:e} after {iterations} iterations")]
    NotConverged { iterations: usize, error: f64 },

    #[error("unknown id: {0}")]
    UnknownId(String),

    #[error("malformed csv at line {line}: {detail}")]
    Csv { line: usize, detail: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::MissingTokenFile(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
