use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("layer norm needs a width of at least 2, got {0}")]
    DegenerateWidth(usize),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unknown token `{token}` in channel `{channel}`")]
    UnknownToken { channel: String, token: String },

    #[error("no preference pairs (all candidate rewards tie)")]
    EmptyPairs,

    #[error("non-finite probability ratio for pair {pair}")]
    NumericRange { pair: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("active sample set is exhausted")]
    Exhausted,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
