use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is singular: eigenvalue #{index} = {value:e} is below tolerance")]
    Singular { index: usize, value: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Module-qualified category, stable across releases, used by the CLI
    /// and the HTTP service when surfacing failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "input.invalid",
            Error::DimensionMismatch { .. } => "input.dimension",
            Error::Singular { .. } => "linalg.singular",
            Error::NotPositiveDefinite => "linalg.not_positive_definite",
            Error::Degenerate(_) => "gmm.degenerate",
            Error::Contract(_) => "dimred.contract",
            Error::Parse { .. } => "data.parse",
            Error::Io(_) => "io",
            Error::Json(_) => "io.json",
        }
    }

    /// True for failures caused by numerical degeneracy rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::NotPositiveDefinite | Error::Degenerate(_)
        )
    }
}
