use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("unknown word id {id} (lexicon size {lexicon_size})")]
    UnknownWord { id: usize, lexicon_size: usize },

    #[error("unit id {id} out of range (vocabulary size {vocab_size})")]
    UnitOutOfRange { id: usize, vocab_size: usize },

    #[error("infeasible CTC target: {labels} labels need at least {required} frames, got {frames}")]
    InfeasibleTarget {
        labels: usize,
        required: usize,
        frames: usize,
    },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("CTC prefix state is already finalized")]
    PrefixFinalized,

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence { epoch: usize, batch: usize, detail: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
