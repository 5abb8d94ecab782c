use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("step called on a finished episode")]
    EpisodeDone,

    #[error("action {0} is not available for this task")]
    InvalidAction(String),

    #[error("memory position {pos} exceeds capacity max_mem={max_mem}")]
    MemoryCapacity { pos: usize, max_mem: usize },

    #[error("loss function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::Parse { .. }
                | Error::InsufficientData(_)
                | Error::Io { .. }
                | Error::Snapshot(_)
                | Error::Json(_)
        )
    }
}
