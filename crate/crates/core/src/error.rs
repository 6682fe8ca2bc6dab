use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants are grouped into coarse categories (see [`ErrorCategory`]) so the
/// command line front end can map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("state error: {0}")]
    State(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("sequence error: length {len} exceeds maximum {max}")]
    Sequence { len: usize, max: usize },

    #[error("format error at offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("incomplete report: {0}")]
    Completeness(String),

    #[error("task {task}: {source}")]
    Task {
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Format,
    Input,
    State,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Io => 3,
            ErrorCategory::Format => 4,
            ErrorCategory::Input => 5,
            ErrorCategory::State => 6,
            ErrorCategory::Numeric => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::Io => "io",
            ErrorCategory::Format => "format",
            ErrorCategory::Input => "input",
            ErrorCategory::State => "state",
            ErrorCategory::Numeric => "numeric",
        }
    }
}

impl Error {
    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a 1-based task index to an error raised while processing that task.
    pub fn in_task(self, task: usize) -> Self {
        Error::Task {
            task,
            source: Box::new(self),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Format { .. } | Error::ManifestMismatch(_) | Error::Serde(_) | Error::Csv(_) => {
                ErrorCategory::Format
            }
            Error::Shape(_)
            | Error::Domain(_)
            | Error::Index(_)
            | Error::InsufficientData(_)
            | Error::Lookup(_)
            | Error::Sequence { .. }
            | Error::Protocol(_)
            | Error::Spec(_) => ErrorCategory::Input,
            Error::State(_) | Error::UndefinedMetric(_) | Error::Completeness(_) => ErrorCategory::State,
            Error::Numeric(_) => ErrorCategory::Numeric,
            Error::Task { source, .. } => source.category(),
        }
    }
}
