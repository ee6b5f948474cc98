use std::path::PathBuf;

use thiserror::Error;

use crate::model::CotStatus;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("candidate {candidate_id}: illegal transition {from} -> {to}")]
    IllegalTransition { candidate_id: String, from: CotStatus, to: CotStatus },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("forbidden: {0}")]
    Forbidden(String),

    #[error("nothing to do: {0}")]
    NothingToDo(String),

    #[error("provider error: {0}")]
    Provider(#[from] crate::provider::ProviderError),

    #[error("export aborted, candidates not accepted: {}", .0.join(", "))]
    UnacceptedCandidates(Vec<String>),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
