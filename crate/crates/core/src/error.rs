use thiserror::Error;

/// Errors produced anywhere in the evaluation pipeline.
///
/// Variants are grouped by what went wrong rather than where, so callers can
/// map them onto process exit codes with [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}: row {row}: {message}")]
    Row {
        source_name: String,
        row: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("linear program is infeasible{}", hint_suffix(.hint))]
    Infeasible { hint: Option<String> },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("sampler invariant violated: {0}")]
    Sampler(String),

    #[error("estimation failure: {0}")]
    Estimation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn hint_suffix(hint: &Option<String>) -> String {
    match hint {
        Some(h) => format!(" ({h})"),
        None => String::new(),
    }
}

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Solver,
    Inconsistent,
    Other,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Row { .. } | Error::Invalid(_) | Error::Json(_) | Error::Csv(_) => {
                ErrorKind::Validation
            }
            Error::Infeasible { .. } | Error::Unbounded | Error::Solver(_) => ErrorKind::Solver,
            Error::Inconsistent(_) | Error::Sampler(_) => ErrorKind::Inconsistent,
            Error::Estimation(_) | Error::Io { .. } => ErrorKind::Other,
        }
    }

    pub(crate) fn row(source_name: &str, row: usize, message: impl Into<String>) -> Self {
        Error::Row {
            source_name: source_name.to_string(),
            row,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
