use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("index {index} out of range for {what} (size {size})")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("unknown node {0}")]
    UnknownNode(String),

    #[error("invalid scene graph: {0}")]
    InvalidGraph(String),

    #[error("degenerate pair: positions coincide in the ground plane")]
    DegeneratePair,

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated in {context}: {detail}")]
    InvariantViolation { context: String, detail: String },

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error in {file} at {path} (line {line}, column {column}): {message}")]
    Parse {
        file: String,
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
