use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library reports. Variants map one-to-one onto the
/// error codes exposed over the C ABI, so keep the order stable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("label error{}: {detail}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Label { line: Option<usize>, detail: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("unknown commonsense attribute `{0}`")]
    Selection(String),
    #[error("service error after {attempts} attempt(s): {detail}")]
    Service { attempts: u32, detail: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unknown fusion strategy `{0}`")]
    Strategy(String),
    #[error("need at least {needed} samples, got {got}")]
    Sample { needed: usize, got: usize },
    #[error("gradient check failed: {0}")]
    Check(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable numeric code for this error category (used by the C ABI).
    pub fn code(&self) -> i32 {
        match self {
            Error::Dimension { .. } => 1,
            Error::Numeric { .. } => 2,
            Error::Contract(_) => 3,
            Error::EmptyInput(_) => 4,
            Error::Parse { .. } => 5,
            Error::Label { .. } => 6,
            Error::Integrity(_) => 7,
            Error::Selection(_) => 8,
            Error::Service { .. } => 9,
            Error::Protocol(_) => 10,
            Error::Strategy(_) => 11,
            Error::Sample { .. } => 12,
            Error::Check(_) => 13,
            Error::Config(_) => 14,
            Error::Checkpoint(_) => 15,
            Error::Io { .. } => 16,
            Error::Json(_) => 17,
        }
    }
}

/// Read a whole file, attaching the path to any I/O failure.
pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
