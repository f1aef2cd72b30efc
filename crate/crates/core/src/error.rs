use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Divergence,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate mask: no entries selected")]
    DegenerateMask,

    #[error("validation error: {0}")]
    Validation(String),

    #[error("node {0} has zero degree")]
    DegenerateDegree(usize),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("degenerate evaluation: {0}")]
    DegenerateEval(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("checkpoint error at line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape { op, lhs, rhs }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Shape { .. }
            | Error::Contract(_)
            | Error::Validation(_)
            | Error::UnsupportedModel(_)
            | Error::Checkpoint { .. } => ErrorClass::Config,
            Error::DegenerateMask
            | Error::DegenerateDegree(_)
            | Error::Parse { .. }
            | Error::InsufficientData(_)
            | Error::DegenerateData(_)
            | Error::DegenerateEval(_)
            | Error::Fit(_) => ErrorClass::Data,
            Error::Divergence { .. } => ErrorClass::Divergence,
            Error::Io { .. } => ErrorClass::Io,
        }
    }
}
