use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing header: expected \"<count> <dim>\", found {0:?}")]
    MissingHeader(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no valid entries found")]
    EmptyVocabulary,

    #[error("corrupt transform file: {0}")]
    CorruptTransformFile(String),

    #[error("corrupt correspondence file: {0}")]
    CorruptMapFile(String),

    #[error("requested {requested} principal components but at most {max} are available")]
    InvalidP { requested: usize, max: usize },

    #[error("target set is empty")]
    EmptyTargets,

    #[error("k = {k} exceeds the {available} available neighbors")]
    KTooLarge { k: usize, available: usize },

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("all {0} runs failed to produce a finite solution")]
    AllRunsFailed(usize),

    #[error("no evaluable words: none of the lexicon entries appear in both vocabularies")]
    NoEvaluableWords,

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
