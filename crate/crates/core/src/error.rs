use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("missing value at row {row}, col {col}")]
    MissingValue { row: usize, col: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("split too small for windowing: interval {name} has {len} rows, needs at least {needed}")]
    SplitTooSmall {
        name: &'static str,
        len: usize,
        needed: usize,
    },

    #[error("undefined RSE: truth has zero deviation from its mean")]
    UndefinedRse,

    #[error("undefined CORR: every feature has zero variance")]
    UndefinedCorr,

    #[error("non-finite training loss at iteration {iteration} (lr={lr})")]
    NonFiniteTrainingLoss { iteration: usize, lr: f64 },

    #[error("non-finite interpretation loss at step {step}")]
    NonFiniteInterpretationLoss { step: usize },

    #[error("sample {id}: {source}")]
    Sample {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid annealing schedule: {0}")]
    Schedule(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
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

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input (configuration, data files, arguments)
    /// rather than by a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::MissingValue { .. }
            | Error::Config(_)
            | Error::UnknownKeys(_)
            | Error::Invalid(_)
            | Error::SplitTooSmall { .. }
            | Error::InvalidPermutation(_)
            | Error::Schedule(_)
            | Error::IndexOutOfRange { .. } => true,
            Error::Sample { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
