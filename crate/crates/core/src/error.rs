use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in an input stream could not be parsed. `offset` is the
    /// 1-based line number (jsonl, qrels, runs) or record index (SGML).
    #[error("malformed record at {offset}: {message}")]
    Malformed { offset: usize, message: String },

    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),

    #[error("duplicate judgment for query `{query_id}`, document `{doc_id}`")]
    DuplicateJudgment { query_id: String, doc_id: String },

    #[error("empty collection")]
    EmptyCollection,

    #[error("invalid index file: {0}")]
    IndexFormat(String),

    #[error("unsupported index format version {found} (expected {expected})")]
    IndexVersion { found: u32, expected: u32 },

    #[error("index checksum failure: {0}")]
    Checksum(String),

    #[error(
        "tokenization mismatch: index was built with fingerprint {index}, query side uses {query}"
    )]
    TokenizationMismatch { index: String, query: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("duplicate document `{doc_id}` in run for query `{query_id}`")]
    DuplicateInRun { query_id: String, doc_id: String },

    #[error("query sets differ: {0}")]
    MismatchedQueries(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("generation backend failed after {produced} texts: {message}")]
    Backend { produced: usize, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Path { path, source }
    }

    pub(crate) fn malformed(offset: usize, message: impl Into<String>) -> Error {
        Error::Malformed {
            offset,
            message: message.into(),
        }
    }

    /// True for failures of a text generation backend (as opposed to bad data).
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. })
    }
}
