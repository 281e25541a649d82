use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("sequence index {0} exceeds the supported maximum")]
    IndexOverflow(u64),
    #[error("matrix dimension {0} is not supported (1..=6)")]
    Dimension(usize),
    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("tensor split {dim_a}x{dim_b} does not factor dimension {n}")]
    IncompatibleSplit { dim_a: usize, dim_b: usize, n: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("divergent boundary factor for {0} under the limit policy")]
    DivergentBoundary(&'static str),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("accumulator mismatch: {0}")]
    Mismatch(String),
    #[error("overlapping index ranges: {0}")]
    Overlap(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("empty accumulator")]
    Empty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
