use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema violation in dialogue `{dialogue}` at `{field}`: {reason}")]
    Schema {
        dialogue: String,
        field: String,
        reason: String,
    },

    #[error("dialogue `{dialogue}` rejected: {reason}")]
    Invariant { dialogue: String, reason: String },

    #[error("value {value:?} not found in context tokens: {diagnostics}")]
    ValueNotFound { value: String, diagnostics: String },

    #[error("template error at line {line}: {reason}")]
    Template { line: usize, reason: String },

    #[error("no templates for key `{0}`")]
    MissingTemplateKey(String),

    #[error("no templates")]
    NoTemplates,

    #[error("sequence of length {len} exceeds maximum {max}")]
    TooLong { len: usize, max: usize },

    #[error("all positions are masked")]
    AllMasked,

    #[error("gold path uses banned transition {from} -> {to}")]
    BannedTransition { from: String, to: String },

    #[error("invalid prompt: {0}")]
    Prompt(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("adapter variant mismatch: checkpoint has {found}, requested {requested}")]
    AdapterMismatch { found: String, requested: String },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("models not loaded")]
    NotLoaded,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
