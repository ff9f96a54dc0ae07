use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("capacity exceeded: {what} is {got}, limit is {limit}")]
    Capacity {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("invalid probability {value} at item {index}")]
    InvalidProbability { index: usize, value: f64 },

    #[error("empty dataset")]
    Empty,

    #[error("invalid guess: {0}")]
    InvalidGuess(String),

    #[error("no pending incorrect guess")]
    NoPending,

    #[error("state is terminal, every item is labeled")]
    Terminal,

    #[error("guess is not an action of the root node")]
    UnknownAction,

    #[error("oracle answers are inconsistent with every leaf")]
    InconsistentOracle,

    #[error("degenerate training input: {0}")]
    DegenerateInput(&'static str),

    #[error("no questions logged")]
    EmptyRecord,

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
