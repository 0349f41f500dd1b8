use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MulchError {
    #[error("no events")]
    NoEvents,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("line {line}: self-loop event {node} -> {node}")]
    SelfLoop { line: u64, node: String },

    #[error("invalid event stream: {0}")]
    InvalidStream(String),

    #[error("all timestamps are equal; cannot rescale a zero time span")]
    ZeroTimeSpan,

    #[error("n_train = {n_train} is out of range for a stream of {n_events} events")]
    SplitOutOfRange { n_train: usize, n_events: usize },

    #[error("invalid membership: {0}")]
    InvalidMembership(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("negative time lag {0}")]
    NegativeLag(f64),

    #[error("event applied out of time order: {time} < {last}")]
    OutOfOrder { time: f64, last: f64 },

    #[error("process is not stationary (spectral radius {radius:.6} >= 1)")]
    NonStationary { radius: f64 },

    #[error(
        "non-positive intensity {value} at event {index} ({sender} -> {receiver}, t = {time})"
    )]
    NonPositiveIntensity {
        index: usize,
        sender: usize,
        receiver: usize,
        time: f64,
        value: f64,
    },

    #[error("cannot cluster {n} nodes into {k} blocks")]
    TooFewNodes { n: usize, k: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{0}")]
    Evaluation(String),

    #[error("empty candidate list")]
    NoCandidates,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = MulchError> = std::result::Result<T, E>;

impl MulchError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MulchError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        MulchError::Json {
            path: path.into(),
            source,
        }
    }
}
