use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: non-monotone time ({time} after {previous})")]
    NonMonotoneTime {
        line: usize,
        time: f64,
        previous: f64,
    },

    #[error("invalid hyperedge: {0}")]
    InvalidHyperedge(String),

    #[error("node id {id} overflows the node range (node count {node_count})")]
    NodeIdOverflow { id: u64, node_count: usize },

    #[error("invalid stream: {0}")]
    InvalidStream(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("time delta must be {0}")]
    TimeDelta(String),

    #[error("cannot sample: {0}")]
    Sampling(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version mismatch: found {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
