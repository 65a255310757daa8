use std::path::PathBuf;

use thiserror::Error;

use crate::TokenId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate token {token:?} on lines {first} and {second}")]
    DuplicateToken {
        token: String,
        first: usize,
        second: usize,
    },

    #[error("vocabulary file is empty")]
    EmptyVocab,

    #[error("document {index} has empty text")]
    EmptyText { index: usize },

    #[error("document {index} tokenizes to an empty sequence")]
    EmptyTokenization { index: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("token {0} does not occur in the corpus statistics")]
    UnknownToken(TokenId),

    #[error("duplicate task sequence {0:?}")]
    DuplicateSequence(Vec<TokenId>),

    #[error("parse error at line {line}, field {field}: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("id {id} is outside the valid range {expected}")]
    IdRange { id: u64, expected: String },

    #[error("non-finite gradient in module {module} at datapoint {index}")]
    NonFiniteGradient { module: String, index: usize },

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("budget {budget} is smaller than the new-token embedding fraction {required}")]
    BudgetTooSmall { budget: f64, required: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown label {0}")]
    Label(String),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::DuplicateToken { .. } => "DuplicateToken",
            Error::EmptyVocab => "EmptyVocab",
            Error::EmptyText { .. } => "EmptyText",
            Error::EmptyTokenization { .. } => "EmptyTokenization",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::UnknownToken(_) => "UnknownToken",
            Error::DuplicateSequence(_) => "DuplicateSequence",
            Error::Parse { .. } => "ParseError",
            Error::IdRange { .. } => "IdRangeError",
            Error::NonFiniteGradient { .. } => "NonFiniteGradient",
            Error::NonFiniteLoss => "NonFiniteLoss",
            Error::BudgetTooSmall { .. } => "BudgetTooSmall",
            Error::Config(_) => "ConfigError",
            Error::Label(_) => "LabelError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, field: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            line,
            field: field.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
