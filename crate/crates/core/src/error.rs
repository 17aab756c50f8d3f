use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at record {record}: {message}")]
    Ingest { record: usize, message: String },

    #[error("empty corpus: all {dropped} documents were emptied by preprocessing")]
    EmptyCorpus { dropped: usize },

    #[error("unknown token id {0}")]
    UnknownToken(u32),

    #[error("invalid parameter `{name}`: {message}")]
    Parameter { name: &'static str, message: String },

    #[error("query `{0}` has no in-vocabulary terms")]
    EmptyQuery(String),

    #[error("no document passes the {mode} retrieval filter")]
    EmptyRetrieval { mode: String },

    #[error("relevance weights are degenerate: every retrieved document has zero likelihood")]
    DegenerateWeights,

    #[error("embedding format error at line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },

    #[error("no vocabulary word has an embedding")]
    ZeroCoverage,

    #[error("cosine similarity is undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("parent topic {topic} not found: no token was assigned to it; try more iterations or a different query")]
    ParentTopicNotFound { topic: u32 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("sampler invariant violated: {0}")]
    Invariant(String),

    #[error("checkpoint does not match this run: {0}")]
    CheckpointMismatch(String),

    #[error("unsupported format tag `{found}` (expected `{expected}`)")]
    FormatTag { expected: &'static str, found: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input or configuration rather than by a
    /// failure while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parameter { .. }
                | Error::Ingest { .. }
                | Error::EmptyCorpus { .. }
                | Error::EmbeddingFormat { .. }
                | Error::ZeroCoverage
                | Error::EmptyQuery(_)
                | Error::UnknownToken(_)
                | Error::FormatTag { .. }
                | Error::CheckpointMismatch(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
