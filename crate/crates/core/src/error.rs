use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{column}` in {source_name}")]
    Schema { column: String, source_name: String },

    #[error("cohort filter produced no records (no study matched either ICD code set)")]
    EmptyCohort,

    #[error("empty manifest: {0}")]
    EmptyManifest(String),

    #[error("duplicate study_id `{0}` in manifest")]
    DuplicateStudy(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("cannot decode image `{path}`: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("study `{0}` not present in manifest")]
    UnknownStudy(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    TrainingAbort {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("io error on `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on `{path}`: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    /// The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. }
                | Error::Invalid(_)
                | Error::Config(_)
                | Error::Shape { .. }
        )
    }
}
