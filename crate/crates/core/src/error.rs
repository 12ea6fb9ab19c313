use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed entry {index}: {reason}")]
    MalformedEntry { index: usize, reason: String },

    #[error("unknown relation label `{0}`")]
    UnknownRelation(String),

    #[error("invalid relation set: {0}")]
    RelationSet(String),

    #[error("invalid lexicon: {0}")]
    Lexicon(String),

    #[error("argument suffix needs {needed} tokens but max_len is {max_len}")]
    SuffixTooLong { needed: usize, max_len: usize },

    #[error("sequence of {len} tokens exceeds {max} encoder positions")]
    SequenceTooLong { len: usize, max: usize },

    #[error("shape mismatch for `{tensor}`: expected {expected:?}, found {found:?}")]
    Shape {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite loss at training instance {index} ({label})")]
    NonFinite { index: usize, label: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Whether the error stems from bad inputs rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFinite { .. } | Error::Io { .. })
    }
}
