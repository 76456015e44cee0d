use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("input too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("rank deficiency: window matrix has rank {rank}, codec needs {requested}")]
    RankDeficient { rank: usize, requested: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("stale tokens: {artifact} was produced by codec {found}, expected {expected}")]
    StaleTokens {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error("not found: {key} (nearest: {})", suggestions.join(", "))]
    NotFound {
        key: String,
        suggestions: Vec<String>,
    },

    #[error("transport error after {retries} retries: {msg}")]
    Transport { msg: String, retries: u32 },

    #[error("unparseable response: {msg}")]
    Format { msg: String, raw: String },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("invariant violated: {0}")]
    Invalid(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Errors caused by bad inputs or mismatched artifacts rather than by
    /// the engine itself.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Transport { .. } | Error::Invalid(_)
        )
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Archive(e.to_string())
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io(io),
            other => Error::UnsupportedFormat(other.to_string()),
        }
    }
}
