use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate patient_id {0:?}")]
    DuplicatePatient(String),

    #[error("unknown sequence {0:?}")]
    UnknownSequence(String),

    #[error("sequence {0:?} already has a manual annotation; pass overwrite to replace it")]
    ManualConflict(String),

    #[error("invalid regex at offset {position}: {message}")]
    InvalidRegex { position: usize, message: String },

    #[error("pattern {existing:?} already uses this regex with label {label}; retire it first")]
    PatternConflict { existing: String, label: String },

    #[error("unknown pattern {0:?}")]
    UnknownPattern(String),

    #[error("distribution for {0:?} is not a probability distribution")]
    NotNormalized(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite feature value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("external scorer: {0}")]
    Transport(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingInput(_) => "missing_input",
            Error::InvalidInput(_) => "invalid_input",
            Error::DuplicatePatient(_) => "duplicate_patient",
            Error::UnknownSequence(_) => "unknown_sequence",
            Error::ManualConflict(_) => "manual_conflict",
            Error::InvalidRegex { .. } => "invalid_regex",
            Error::PatternConflict { .. } => "pattern_conflict",
            Error::UnknownPattern(_) => "unknown_pattern",
            Error::NotNormalized(_) => "not_normalized",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::ArtifactMismatch(_) => "artifact_mismatch",
            Error::Transport(_) => "transport",
            Error::Json(_) => "json",
        }
    }
}
