use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed triple line: expected at least 3 tab-separated fields, found {fields}")]
    MalformedLine { fields: usize },

    #[error("empty {0} field")]
    EmptyField(&'static str),

    #[error("relation vocabulary is full ({capacity} labels); cannot intern {label:?}")]
    RelationOverflow { label: String, capacity: usize },

    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad {format} file: {reason}")]
    BadFormat { format: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cosine similarity is undefined for a zero-norm vector")]
    ZeroNormInput,

    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),

    #[error("embedding provider failed on triple {triple}: {source}")]
    Provider {
        triple: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("knowledge graph is empty")]
    EmptyGraph,

    #[error("concept {0} does not occur in any triple")]
    OrphanConcept(u32),

    #[error("relation id {relation} out of range (capacity {capacity})")]
    RelationOutOfRange { relation: usize, capacity: usize },

    #[error("width mismatch in fused block {block}: expected {expected}, got {got}")]
    WidthMismatch { block: &'static str, expected: usize, got: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("token id {id} outside vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("reference sequence is empty")]
    EmptyReference,

    #[error("invalid instance {id}: {reason}")]
    InvalidInstance { id: String, reason: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    DivergedLoss { epoch: usize, step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_line(line: usize, source: Error) -> Self {
        Error::AtLine { line, source: Box::new(source) }
    }

    pub(crate) fn bad_format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::BadFormat { format, reason: reason.into() }
    }
}
