use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("invalid record ({context}): {msg}")]
    InvalidRecord { context: String, msg: String },
    #[error("unknown doc_id: {0}")]
    UnknownDoc(String),
    #[error("duplicate doc_id: {0}")]
    DuplicateDoc(String),
    #[error("duplicate qid: {0}")]
    DuplicateQuery(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing grade for (qid={qid}, doc_id={doc_id})")]
    MissingGrade { qid: String, doc_id: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("recipe error: {0}")]
    Recipe(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidRecord {
            context: context.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
