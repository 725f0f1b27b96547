//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid pair {first} / {second}: {reason}")]
    InvalidPair {
        first: String,
        second: String,
        reason: String,
    },

    #[error("invalid rank {rank}: must satisfy 1 <= rank <= min({d_out}, {d_in})")]
    InvalidRank {
        rank: usize,
        d_out: usize,
        d_in: usize,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed record at line {line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("asset error for {id}: {message}")]
    Asset { id: String, message: String },

    #[error("comparator failed for test {test_id} vs anchor {anchor_id}: {message}")]
    Comparator {
        test_id: String,
        anchor_id: String,
        message: String,
    },

    #[error("replay log has no entry for {0}")]
    ReplayMiss(String),

    #[error("remote transport error: {0}")]
    RemoteTransport(String),

    #[error("remote protocol error: {0}")]
    RemoteProtocol(String),

    #[error("remote service returned status {status}: {body}")]
    RemoteStatus { status: u16, body: String },

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
