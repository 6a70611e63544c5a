use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsatisfiable regime: attribute `{attribute}` has no legal rule in the {split} split")]
    UnsatisfiableRegime { attribute: String, split: String },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("{path}: {detail} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("{path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("function is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
