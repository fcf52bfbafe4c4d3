use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CsedError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CsedError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("mel filterbank is degenerate: filter {band} covers no FFT bin")]
    DegenerateFilterbank { band: usize },

    #[error("unknown event label `{0}`")]
    UnknownEvent(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("invalid adjacency matrix: {0}")]
    InvalidAdjacency(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionError { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("forward cache does not match the supplied parameters or gradient")]
    CacheMismatch,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("gradient check failed: max relative error {max_rel_err:.3e} exceeds {tol:.0e}")]
    GradientCheckFailed { max_rel_err: f64, tol: f64 },

    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },

    #[error("line {line}: offset must be greater than onset")]
    InvalidInterval { line: usize },

    #[error("infeasible synthesis config: {0}")]
    InvalidSynthConfig(String),

    #[error("metric inputs disagree: {0}")]
    MetricInputMismatch(String),

    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CsedError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CsedError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        CsedError::ShapeError(msg.into())
    }

    /// Process exit code used by the command-line tool.
    ///
    /// 1 usage error, 2 data error, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CsedError::InvalidConfig(_) => 1,
            CsedError::Divergence(_) | CsedError::DegenerateFilterbank { .. } | CsedError::GradientCheckFailed { .. } => 3,
            _ => 2,
        }
    }
}
