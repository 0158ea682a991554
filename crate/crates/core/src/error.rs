use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Schroeder decay did not reach the regression range.
    #[error("decay range not reached: measured dynamic range {dynamic_range_db:.1} dB, need {required_db:.1} dB")]
    DecayRange {
        dynamic_range_db: f64,
        required_db: f64,
    },

    #[error("decay below measurable: {0}")]
    BelowMeasurable(String),

    #[error("missing metadata fields: {}", .0.join(", "))]
    MissingMetadata(Vec<String>),

    #[error("mono required (file has {0} channels)")]
    MonoRequired(u16),

    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("no feasible query distance: {0}")]
    NoFeasibleQuery(String),

    #[error("constraint satisfaction failed after {attempts} attempts: {what}")]
    Constraint { attempts: usize, what: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint schema error: {0}")]
    Schema(String),

    #[error("non-finite loss at epoch {epoch} step {step}; batch dump written to {}", dump.display())]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        dump: PathBuf,
    },

    #[error("external tool failed: {0}")]
    External(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
