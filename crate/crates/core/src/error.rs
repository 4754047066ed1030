use std::path::PathBuf;

use crate::ndtensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: &'static str },
    #[error("{path}:{line}: timestamp {value} is earlier than the previous row")]
    NonMonotone { path: PathBuf, line: u64, value: f64 },
    #[error("{path}: recording has no samples")]
    Empty { path: PathBuf },
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: u64, detail: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {detail}")]
    Value { key: String, detail: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss in {stage} at epoch {epoch}, step {step}")]
    NonFiniteLoss { stage: &'static str, epoch: usize, step: usize },
    #[error("leakage: window {window_id:#x} from the {split} split reached a gradient step")]
    Leakage { window_id: u64, split: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether this failure is a numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::Tensor(TensorError::NonFinite { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
