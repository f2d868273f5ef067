//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any c3 component.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("registry: {0}")]
    Registry(String),

    #[error("registry: duplicate context name {0}")]
    DuplicateContext(String),

    #[error("registry: unknown context name {0}")]
    UnknownContext(String),

    #[error("registry: invalid regex for {name}: {source}")]
    InvalidRegex {
        name: String,
        #[source]
        source: Box<regex::Error>,
    },

    #[error("parse failure in {path} at {line}:{column}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
    },

    #[error("{op}: precondition violated: {reason}")]
    Precondition { op: &'static str, reason: String },

    #[error("unknown tokenizer {0:?}")]
    UnknownTokenizer(String),

    #[error("prompt budget exhausted: target question needs {needed} tokens, {available} available")]
    BudgetExhausted { needed: usize, available: usize },

    #[error("invalid number literal {0:?}")]
    InvalidNumberLiteral(String),

    #[error("llm endpoint not configured and no cached response for request {key}")]
    MissingCredential { key: String },

    #[error("llm transport failure: {0}")]
    Transport(String),

    #[error("llm backend returned HTTP {status}: {body_excerpt}")]
    HttpStatus { status: u16, body_excerpt: String },

    #[error("response parse failure: {reason}; body excerpt: {body_excerpt}")]
    ResponseParse {
        reason: String,
        body_excerpt: String,
    },

    #[error("ner server unreachable: {0}")]
    NerServer(String),

    #[error("search: {0}")]
    Search(String),

    #[error("mining {site}: {source}")]
    Mining {
        site: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn precondition(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Precondition {
            op,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
