use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("dataset has shape ({rows}, {cols}), expected ({expected_rows}, {expected_cols})")]
    Shape { rows: usize, cols: usize, expected_rows: usize, expected_cols: usize },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("policy file line {line}: {reason}")]
    PolicyFormat { line: usize, reason: String },
    #[error(transparent)]
    Core(#[from] sbs_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), message: message.into() }
    }

    /// Stable category name for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::FileNotFound(_) => "file-not-found",
            Error::MalformedRow { .. } => "malformed-row",
            Error::Shape { .. } => "shape",
            Error::Schema { .. } => "schema",
            Error::UnknownExperiment(_) => "unknown-experiment",
            Error::PolicyFormat { .. } => "policy-format",
            Error::Core(_) => "numerical",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
