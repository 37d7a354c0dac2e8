use thiserror::Error;

use crate::types::{ItemId, UserId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown input format `{0}`")]
    UnknownFormat(String),

    #[error("no records")]
    NoRecords,

    #[error("dataset empty after filtering")]
    EmptyAfterFiltering,

    #[error("sequence of user {user} has length {len}, need at least 3 for a leave-one-out split")]
    SequenceTooShort { user: UserId, len: usize },

    #[error("sampled user set is empty (fraction {fraction})")]
    EmptySample { fraction: f64 },

    #[error("no negative candidates")]
    NoNegativeCandidates,

    #[error("user {user}: {source}")]
    ForUser {
        user: UserId,
        #[source]
        source: Box<Error>,
    },

    #[error("item {0} is absent from the embedding table")]
    MissingEmbedding(ItemId),

    #[error("user {user} has only {available} negative candidates, need {needed}")]
    InsufficientNegatives {
        user: UserId,
        available: usize,
        needed: usize,
    },

    #[error("sequence contains the mask sentinel")]
    SentinelInSequence,

    #[error("no baseline (NONE) cell for fraction {0}")]
    MissingBaseline(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
