use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
///
/// The variants are grouped so that front ends can map them onto exit codes:
/// validation problems, infeasible optimal control problems and numerical
/// failures are kept apart from plain I/O trouble.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension { context: String, expected: String, found: String },

    #[error("pencil is not regular: {0}")]
    SingularPencil(String),

    #[error("unsupported nilpotency index s = {s}: {message}")]
    UnsupportedIndex { s: usize, message: String },

    #[error("infeasible optimal control problem at t = {t}: {block} ({detail})")]
    Infeasible { t: usize, block: String, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), message: message.into() }
    }

    pub fn dimension(context: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension { context: context.into(), expected: expected.to_string(), found: found.to_string() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
