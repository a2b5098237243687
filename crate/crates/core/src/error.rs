use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty subset")]
    EmptySubset,

    #[error("empty point set")]
    EmptySet,

    #[error("index {index} out of range for a set of {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite coordinate at point {point}, coordinate {coord}")]
    NonFiniteCoordinate { point: usize, coord: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite supremum sample at draw {draw}")]
    NonFiniteSample { draw: u64 },

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("quantile inversion failed at u = {u}: {reason}")]
    QuantileInversion { u: f64, reason: String },

    #[error("partition tree is not admissible: {0}")]
    NotAdmissible(String),

    #[error("set too large for exhaustive search: m = {m}, limit {limit}")]
    TooLarge { m: usize, limit: usize },

    #[error("partition trees are built over different point sets")]
    MismatchedSets,

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("csv line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
