use thiserror::Error;

use crate::geom::TaskId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("no boxes to cover")]
    NoBoxes,
    #[error("box outside frame")]
    OutsideFrame,
    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("image shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty image")]
    EmptyImage,
    #[error("non-positive dimensions {h}x{w}")]
    NonPositiveDims { h: i64, w: i64 },
    #[error("missing state for task {0}")]
    MissingTask(TaskId),
    #[error("frame {frame_seq} already dispatched")]
    AlreadyDispatched { frame_seq: u64 },
    #[error("sequence regression for {task}: {got} < {last}")]
    SequenceRegression { task: TaskId, got: u64, last: u64 },
    #[error("no critical detection cached for {0}")]
    EmptyCache(TaskId),
    #[error("no scorable objects")]
    NoScorableObjects,
    #[error("zero denominator in cost-effectiveness")]
    ZeroDenominator,
    #[error("empty sample")]
    EmptySample,
    #[error("line {line}: {reason}")]
    Trace { line: usize, reason: String },
    #[error("{file}: {reason}")]
    Report { file: String, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn trace(line: usize, reason: impl Into<String>) -> Self {
        Error::Trace {
            line,
            reason: reason.into(),
        }
    }
}
