use thiserror::Error;

use crate::bridge::BridgeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid question catalog: {0}")]
    Catalog(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("unknown question `{0}`")]
    UnknownQuestion(String),

    #[error("unknown country `{0}`")]
    UnknownCountry(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("no respondents match {persona} on question `{question}`")]
    EmptySupport { persona: String, question: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at step {step} of stage {stage}: {detail}")]
    Diverged { stage: u8, step: usize, detail: String },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Bridge(#[from] BridgeError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
