use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("mode {mode}: drift does not vanish at the origin (|f(0)| = {norm:e})")]
    DriftAtOrigin { mode: usize, norm: f64 },

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0} out of range")]
    OutOfRange(String),

    /// A propagated state or costate left the admissible region.
    #[error("divergence at step {khat}: {detail}")]
    Divergence { khat: usize, detail: String },

    #[error("fit underdetermined: {0}")]
    Underdetermined(String),

    #[error("rank-deficient design matrix (rank {rank} < {cols} columns); use ridge > 0 or more samples")]
    RankDeficient { rank: usize, cols: usize },

    #[error("step {0} has no trained weights")]
    Untrained(usize),

    #[error("training diverged at step {khat}: residual grew from {from:e} to {to:e}")]
    TrainingDiverged { khat: usize, from: f64, to: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("incompatible weights: {0}")]
    Incompatible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
