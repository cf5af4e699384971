//! Error type shared across the pipeline.

use std::io;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A field could not be parsed as a number. Row and column are 0-based.
    #[error("parse error at row {row}, column {col}: {detail}")]
    Parse {
        row: usize,
        col: usize,
        detail: String,
    },

    /// A rating outside [-10, 10] that is not the missing sentinel 99.
    #[error("range error at row {row}, column {col}: {value} is outside [-10, 10] and not 99")]
    Range { row: usize, col: usize, value: f64 },

    /// Dimension or length mismatch between inputs.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration (bad fractions, k > n, zero dimensions, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Hopkins sampling requested more rows than the data provides.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Input data is too degenerate for the requested computation.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Evaluation over an empty set of observed cells.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Analysis preconditions violated (empty cluster, stray missing marker).
    #[error("analysis error: {0}")]
    Analysis(String),

    /// A parameter update produced NaN or infinity.
    #[error("numeric overflow: {0}")]
    NonFinite(String),

    /// A persisted artifact carries the wrong format tag.
    #[error("artifact format mismatch: expected {expected:?}, found {found:?}")]
    Format { expected: String, found: String },

    /// A pipeline stage failed; carries the stage name and the cause.
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
