use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    /// A percentile or reduction was requested over a set with no valid entries.
    #[error("no valid costs in {0}")]
    EmptyCost(String),

    #[error("non-finite value in {term} at {location}")]
    NonFinite { term: String, location: String },

    #[error("solver diverged at iteration {iteration} (objective {value})")]
    Diverged {
        iteration: usize,
        value: f64,
        trace: Vec<f64>,
    },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
