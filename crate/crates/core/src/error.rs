use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AplError>;

#[derive(Debug, Error)]
pub enum AplError {
    #[error("invalid segment [{start}, {end}]: {reason}")]
    InvalidSegment { start: f64, end: f64, reason: &'static str },

    #[error("frame not inside action: t={time} outside [{start}, {end}]")]
    FrameOutsideAction { time: f64, start: f64, end: f64 },

    #[error("length mismatch in {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("degenerate positive count: n_pos = 0 with nonzero {term} loss")]
    DegeneratePositiveCount { term: &'static str },

    #[error("degenerate pair sets: {0}")]
    DegeneratePairSets(String),

    #[error("no labeled instances for class {0}")]
    NoLabeledInstances(usize),

    #[error("degenerate contrast batch: no positive pair")]
    DegenerateContrastBatch,

    #[error("temperature {0} is below the minimum of 1e-6")]
    TemperatureTooSmall(f64),

    #[error("only {distinct} distinct points for k = {k} clusters")]
    TooFewDistinctPoints { distinct: usize, k: usize },

    #[error("cannot draw {partitions} partitions from {frames} frames")]
    TooManyPartitions { partitions: usize, frames: usize },

    #[error("missing similarity score for instance {0}")]
    MissingScore(String),

    #[error("infeasible world: {0}")]
    InfeasibleWorld(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

impl AplError {
    /// Process exit code: 1 for computation errors, 2 for I/O, format and
    /// configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            AplError::Io { .. } | AplError::Format { .. } | AplError::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AplError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        AplError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
