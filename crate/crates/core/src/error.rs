use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the modelmesh stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("architecture mismatch: {0}")]
    Arch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("model not found: {0}")]
    NotFound(String),

    #[error("integrity check failed for {id}: content hashes to {actual}")]
    Integrity { id: String, actual: String },

    #[error("query syntax error at byte {offset}: {message}")]
    QuerySyntax { offset: usize, message: String },

    #[error("query value out of range: {0}")]
    QueryRange(String),

    #[error("malformed query: {0}")]
    Query(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    /// An error reported by a remote service, with the code it sent.
    #[error("remote error [{code}]: {message}")]
    Remote { code: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable code, used on the wire and by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Precondition(_) => "precondition",
            Error::Config(_) => "config",
            Error::Arch(_) => "arch",
            Error::Format(_) => "format",
            Error::Aggregation(_) => "aggregation",
            Error::NotFound(_) => "not_found",
            Error::Integrity { .. } => "integrity",
            Error::QuerySyntax { .. } => "query_syntax",
            Error::QueryRange(_) => "query_range",
            Error::Query(_) => "query",
            Error::Protocol(_) => "protocol",
            Error::Remote { .. } => "remote",
            Error::Io { .. } | Error::Stream(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
