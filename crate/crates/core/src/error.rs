use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("masked-empty row: every key of a softmax row is masked ({0})")]
    MaskedEmptyRow(String),
    #[error("empty loss: every target position is padding")]
    EmptyLoss,
    #[error("config error: {0}")]
    Config(String),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("{path}:{line}: {msg}")]
    CorpusLine { path: PathBuf, line: usize, msg: String },
    #[error("metric error: {0}")]
    Metric(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("run {name}: {source}")]
    Run { name: String, source: Box<Error> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// Data and configuration problems map to 2, failures while computing map to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Corpus(_)
            | Error::CorpusLine { .. }
            | Error::Format(_)
            | Error::UnsupportedVersion { .. }
            | Error::Io { .. } => 2,
            Error::Run { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
