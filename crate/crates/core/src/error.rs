use thiserror::Error;

/// Errors produced by the library.
///
/// Variants are grouped by how a caller is expected to react: precondition
/// and input errors are caller mistakes, numerical errors carry the offending
/// evaluation point, and validation errors aggregate every violation found.
#[derive(Debug, Error)]
pub enum FlrError {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at lambda={lambda:e}, sigma={sigma:e}: {what}")]
    NonFinite {
        what: String,
        lambda: f64,
        sigma: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("search budget exhausted: {0}")]
    Resource(String),

    #[error("construction check failed: {0}")]
    Construction(String),

    #[error("invalid configuration ({} problem(s)): {}", .0.len(), .0.join("; "))]
    Validation(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = FlrError> = std::result::Result<T, E>;

impl FlrError {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        FlrError::Precondition(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        FlrError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
