use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("response matrix must have at least 2 respondents and 2 items (got {n}x{p})")]
    TooSmall { n: usize, p: usize },

    #[error("missing response at row {row}, column {col}")]
    MissingResponse { row: usize, col: usize },

    #[error("non-binary entry {value:?} at row {row}, column {col}")]
    NonBinary {
        row: usize,
        col: usize,
        value: String,
    },

    #[error("ragged input: row {row} has {found} cells, expected {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("item {item} has no correct responses; its latent position is undefined")]
    DegenerateItem { item: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("convergence guard tripped: {0}")]
    Convergence(String),

    #[error("malformed binary file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TooSmall { .. }
            | Error::MissingResponse { .. }
            | Error::NonBinary { .. }
            | Error::Ragged { .. }
            | Error::DegenerateItem { .. }
            | Error::Dimension(_)
            | Error::Config(_)
            | Error::Format { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
            Error::Convergence(_) => 4,
            Error::Context { source, .. } => source.exit_code(),
        }
    }
}
