use thiserror::Error;

/// Failure categories shared by the library and the CLI.
///
/// The CLI maps each category to an exit code, so new variants should land in
/// one of the existing groups (see [`Error::category`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("did not converge: {0}")]
    Convergence(String),
    #[error("KKT conditions violated: {0}")]
    KktViolation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Generation,
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Validation(_) | Error::Dimension { .. } | Error::Io { .. } | Error::Json { .. } => {
                ErrorCategory::Validation
            }
            Error::Generation(_) | Error::Convergence(_) | Error::KktViolation(_) => {
                ErrorCategory::Generation
            }
            Error::Numerical(_) => ErrorCategory::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
