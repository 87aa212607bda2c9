use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV at row {row}: {message}")]
    MalformedRow { row: u64, message: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("record {row}: {message}")]
    InvalidRecord { row: u64, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("prefix length {k} out of range 1..={size}")]
    PrefixOutOfRange { k: usize, size: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("more topics than tokens: k = {k}, tokens = {tokens}")]
    TooManyTopics { k: usize, tokens: usize },

    #[error("topic {topic} out of range for a {k}-topic model")]
    TopicOutOfRange { topic: usize, k: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("every held-out token is out of vocabulary")]
    AllOutOfVocabulary,

    #[error("inconsistent recursion trace: {0}")]
    InconsistentTrace(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
