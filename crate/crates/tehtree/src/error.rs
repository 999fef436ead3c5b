//! Error type shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A cell could not be read as a number. Rows are 1-based data rows
    /// (the header is row 0).
    #[error("parse error at row {row}, column '{col}': {msg}")]
    Parse { row: usize, col: String, msg: String },

    /// Input data violates a contract (single-arm data, bad treatment
    /// codes, dimension mismatches, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Bad configuration (flags, scenario codes, fractions out of range).
    #[error("config error: {0}")]
    Config(String),

    /// A regressor with zero variance was handed to a model fit. Callers
    /// testing many covariates map this to p = 1 instead of failing.
    #[error("degenerate regressor: {0}")]
    Degenerate(String),

    /// Numerical failure (non-PD matrix, solver breakdown).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A pipeline stage failed; wraps the stage error with its name.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Exit code for the CLI: 2 for user/input errors, 1 for internal ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation(_) | Error::Config(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
