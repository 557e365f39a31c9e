use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("i/o error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },

    #[error("unsupported {format} version {found} (expected {expected})")]
    UnsupportedVersion {
        format: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("unexpected trailing bytes after {0}")]
    TrailingData(&'static str),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("unknown metric code {0}")]
    BadMetric(u8),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("count mismatch: expected {expected}, found {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("batch of {0} is too small; at least 2 items are needed for in-batch negatives")]
    BatchTooSmall(usize),

    #[error("candidate pool too small: need {needed}, have {available}")]
    PoolTooSmall { needed: usize, available: usize },

    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("correlation undefined: series is constant")]
    ConstantSeries,

    #[error("{0} requires at least 3 observations, got {1}")]
    TooFewObservations(&'static str, usize),

    #[error("malformed metadata at line {line}: {message}")]
    Metadata { line: usize, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("embedding service unreachable: {0}")]
    Connection(String),

    #[error("embedding service returned status {status}: {message}")]
    HttpStatus { status: u16, message: String },

    #[error("embedding protocol violation: {0}")]
    Protocol(String),

    #[error("embedding service returned dim {found}, expected {expected}")]
    RemoteDimMismatch { expected: usize, found: usize },

    #[error("embedding service returned {found} vectors for {expected} texts")]
    RemoteCountMismatch { expected: usize, found: usize },
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }

    /// True for failures of input data or files (bad formats, shape or id
    /// problems) as opposed to runtime failures such as I/O or a remote
    /// service being down.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self,
            Error::Io(_)
                | Error::IoAt { .. }
                | Error::Connection(_)
                | Error::HttpStatus { .. }
                | Error::Protocol(_)
                | Error::RemoteDimMismatch { .. }
                | Error::RemoteCountMismatch { .. }
        )
    }
}
