//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch in a tensor operation; names the op and the offending dims.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A catalog operation produced NaN/Inf from finite inputs.
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    /// `backward` called on a non-scalar node.
    #[error("backward: loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("wav: {0}")]
    Wav(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("audio: {0}")]
    Audio(String),

    #[error("model: {0}")]
    Model(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("train: {0}")]
    Train(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
