use std::path::PathBuf;

use thiserror::Error;

use crate::regressor::TrainHistory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("stiff-or-singular: step size {h:e} fell below floor {h_min:e} at t = {t}")]
    StepUnderflow { t: f64, h: f64, h_min: f64 },

    #[error("maximum step count {0} exceeded")]
    MaxSteps(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter {name} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("example {index} could not be generated after {attempts} attempts: {last}")]
    Generation {
        index: usize,
        attempts: usize,
        last: Box<Error>,
    },

    #[error("non-finite loss at example {0}")]
    NonFiniteLoss(usize),

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        /// Log entries recorded before the failure.
        history: Box<TrainHistory>,
    },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("true value is 0 but the parameter is not flagged zero-true")]
    ZeroTruth,

    #[error("bad magic header: not a {expected} file")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("file truncated at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
