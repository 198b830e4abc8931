use std::path::PathBuf;

/// Errors raised by the toolkit.
///
/// The variants are grouped by how a caller is expected to react: bad input
/// or configuration, unreadable or malformed data, and numerical breakdown
/// during optimization.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed at byte {offset}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Malformed {
        path: PathBuf,
        offset: u64,
        line: Option<usize>,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error reports a numerical breakdown (NaN/inf) rather than
    /// bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }

    /// Whether the error stems from the caller's arguments or configuration.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidArgument(_) | Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
