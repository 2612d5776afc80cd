use std::path::PathBuf;

/// Errors produced by the simulator library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("token id {id} out of range for codebook size {q}")]
    TokenOutOfRange { id: usize, q: usize },

    #[error("invalid source model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    TokenFile { path: PathBuf, line: usize, msg: String },

    #[error("empty candidate set at slot {0}")]
    EmptyCandidates(usize),

    #[error("bridge {endpoint}: {msg}")]
    Bridge { endpoint: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
