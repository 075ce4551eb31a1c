use std::path::PathBuf;

/// Errors raised anywhere in the forecasting engine.
///
/// Variants are grouped so callers (the CLI in particular) can map them onto
/// stable exit codes with [`Error::category`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("softmax row {row} is fully masked")]
    DegenerateRow { row: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("bad magic bytes {0:?}, expected \"DWAF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated tensor file: header declares {expected} payload bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("tensor file size disagrees with header: expected {expected} payload bytes, found {found}")]
    SizeMismatch { expected: u64, found: u64 },
    #[error("malformed tensor header: {0}")]
    MalformedHeader(String),
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error("adjacency line {line}: {msg}")]
    Adjacency { line: usize, msg: String },
    #[error("series too short: length {len} < {needed} required for one window")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("normalization statistics degenerate: std = {0}")]
    DegenerateStats(f64),
    #[error("empty evaluation set")]
    EmptyEvaluation,
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {norms}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
    Internal,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Config(_) | Unsupported(_) => ErrorCategory::Config,
            BadMagic(_)
            | UnsupportedVersion(_)
            | UnsupportedDtype(_)
            | Truncated { .. }
            | SizeMismatch { .. }
            | MalformedHeader(_)
            | Metadata(_)
            | Adjacency { .. }
            | SeriesTooShort { .. }
            | DegenerateStats(_)
            | EmptyEvaluation
            | Checkpoint(_)
            | Io { .. } => ErrorCategory::Data,
            NonFiniteLoss { .. } | DegenerateRow { .. } => ErrorCategory::Numerical,
            Shape { .. } | InvalidShape(_) | NonScalarLoss(_) | IndexOutOfRange { .. } => {
                ErrorCategory::Internal
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
