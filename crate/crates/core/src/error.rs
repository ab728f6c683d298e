use thiserror::Error;

pub type Result<T, E = CycflowError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CycflowError {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid tour: {0}")]
    InvalidTour(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{solver} supports at most {max} nodes, got {n}")]
    SizeLimit {
        solver: &'static str,
        n: usize,
        max: usize,
    },

    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    #[error("size mismatch: expected {expected} rows, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("dataset has no tour labels ({unlabeled} of {total} records unlabeled)")]
    MissingLabels { unlabeled: usize, total: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CycflowError {
    /// True for errors caused by floating-point trouble rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CycflowError::Numerical(_) | CycflowError::NonConvergence { .. }
        )
    }
}
