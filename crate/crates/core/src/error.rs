use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("linear solve failed ({context}): system is not positive definite")]
    SolveFailed { context: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}:{line}: {message}")]
    MalformedInput {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("query syntax error at byte {offset}: {message}")]
    QuerySyntax { offset: usize, message: String },

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("{kind} id {id} out of range (size {size})")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        size: usize,
    },

    #[error("could not sample a `{shape}` query after {retries} attempts")]
    Unsatisfiable { shape: String, retries: usize },

    #[error("{0}")]
    Mismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Prefixes a numeric error with where it happened (a DAG node, a sample).
    pub fn with_context(self, context: impl std::fmt::Display) -> Self {
        match self {
            Error::SolveFailed { context: inner } => Error::SolveFailed {
                context: format!("{context}: {inner}"),
            },
            Error::Numeric(msg) => Error::Numeric(format!("{context}: {msg}")),
            other => other,
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::MalformedInput { .. }
            | Error::Format { .. }
            | Error::QuerySyntax { .. }
            | Error::UnknownName { .. }
            | Error::Mismatch(_) => ErrorKind::Format,
            Error::SolveFailed { .. } | Error::Numeric(_) => ErrorKind::Numeric,
            Error::InvalidParameter(_)
            | Error::DimensionMismatch { .. }
            | Error::IdOutOfRange { .. }
            | Error::Unsatisfiable { .. } => ErrorKind::Usage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Io,
    Format,
    Numeric,
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
