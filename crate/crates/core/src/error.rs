use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("degenerate mask: row {row} has no unmasked entry")]
    DegenerateMask { row: usize },
    #[error("invalid class index {index} for {classes} classes")]
    InvalidClass { index: usize, classes: usize },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("unknown relation label `{0}`")]
    UnknownRelation(String),
    #[error("unknown relation id {0}")]
    UnknownRelationId(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("model mismatch: {0}")]
    Mismatch(String),
    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: u64, loss: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
