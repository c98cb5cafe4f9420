use thiserror::Error;

use crate::oracle::QueryPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no interior sphere: {0}")]
    NoInteriorSphere(String),

    #[error("assumption 2 violated: the gradient at the uniform rate shows no responsive coordinate")]
    FlatGradient,

    #[error("regularity violation: |{ratio}| = {value:e} is below {threshold:e}")]
    Regularity {
        ratio: String,
        value: f64,
        threshold: f64,
    },

    #[error("cost-sign violation: predictive weight {index} estimated as {value}")]
    CostSign { index: usize, value: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    /// Raised by a replaying oracle when the algorithm asks a question that
    /// has not been answered yet. The elicitation is suspended, not failed.
    #[error("suspended awaiting an answer to query #{index}")]
    Suspended {
        index: usize,
        left: QueryPoint,
        right: QueryPoint,
    },

    #[error("query {got} is not pending (pending: {expected:?})")]
    StaleQuery { expected: Option<u64>, got: u64 },

    #[error("session has not finished")]
    NotDone,

    #[error("replay diverged at query #{0}")]
    ReplayDiverged(usize),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
