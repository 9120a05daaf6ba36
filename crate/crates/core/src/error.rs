use thiserror::Error;

use crate::span::Span;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid span {start}..{end} for text of {len} characters")]
    InvalidSpan { start: usize, end: usize, len: usize },

    #[error("span {span} straddles sentence boundary {sentence}")]
    BoundaryViolation { span: Span, sentence: Span },

    #[error("document {doc_id}: dependency references unknown entity `{entity_id}`")]
    DanglingReference { doc_id: String, entity_id: String },

    #[error("document {doc_id}: {message}")]
    InvalidDocument { doc_id: String, message: String },

    #[error("template {template_id}: {message}")]
    TemplateMisuse { template_id: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate reader output for {qid}: {message}")]
    DegenerateInput { qid: String, message: String },

    #[error("oracle misuse for {qid}: {message}")]
    OracleMisuse { qid: String, message: String },

    #[error("protocol error in `{field}`: {message}")]
    Protocol { field: String, message: String },

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("qid collision on {qid}")]
    QidCollision { qid: String },

    #[error("line {line}: field `{field}`: {message}")]
    Parse { line: usize, field: String, message: String },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("ill-formed gold: {0}")]
    IllFormedGold(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Transport failures are the only errors worth retrying.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
