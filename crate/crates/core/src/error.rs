use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate utt_id {utt_id:?} on lines {first_line} and {second_line}")]
    DuplicateUttId {
        utt_id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("session {session_id:?}: indices are not a contiguous 0-based run (expected {expected}, found {found})")]
    NonContiguousSession {
        session_id: String,
        expected: usize,
        found: usize,
    },

    #[error("unknown speaker {0:?} (expected \"child\" or \"adult\")")]
    UnknownSpeaker(String),

    #[error("need at least 2 sessions for a two-fold split, found {0}")]
    TooFewSessions(usize),

    #[error("invalid template: {0}")]
    Template(String),

    #[error("invalid prompt input: {0}")]
    Prompt(String),

    #[error("no N-best list for utterance {0:?}")]
    MissingNBest(String),

    #[error("invalid N-best list for {utt_id:?}: {message}")]
    NBest { utt_id: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot aggregate: {0}")]
    Aggregate(String),

    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
