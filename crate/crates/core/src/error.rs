//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("eigenvalue iteration did not converge after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        /// Eigenvalues deflated before the iteration stalled.
        partial: Vec<(f64, f64)>,
    },

    #[error("no stabilizing initial gain found: {0}")]
    NoStabilizingInit(String),

    #[error("trajectory escaped (norm {norm:.3e} at t = {time:.6})")]
    BlowUp { time: f64, norm: f64 },

    #[error("complex root {0:?} has no conjugate partner")]
    UnpairedComplexRoot((f64, f64)),

    #[error("generation stalled: {accepted} accepted out of {attempted} attempts")]
    GenerationStall { accepted: usize, attempted: usize },

    #[error("non-finite gradient encountered in {0}")]
    NonFiniteGradient(String),

    #[error("training diverged: loss {0:.3e} exceeded 1e6")]
    DivergedLoss(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("instance is not admissible: {0}")]
    NotAdmissible(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersionMismatch { expected: u32, found: u32 },

    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },

    #[error("checkpoint checksum mismatch (stored {stored}, computed {computed})")]
    ChecksumMismatch { stored: String, computed: String },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
}
