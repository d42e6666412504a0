use thiserror::Error;

pub type Result<T, E = BudisError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BudisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("corpus has no usable tokens")]
    EmptyCorpus,

    #[error("unknown area label `{0}`")]
    UnknownArea(String),

    #[error("adjacency matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("imputation cell `{0}` has no sampled units")]
    EmptyCell(String),

    #[error("area `{0}` has no units")]
    EmptyArea(String),

    #[error("posterior precision is not positive definite (degenerate design?)")]
    NotPositiveDefinite,

    #[error("ELBO decreased at iteration {iteration}: {previous} -> {current}")]
    ElboDecrease {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("every simulation replicate failed")]
    AllReplicatesFailed,

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BudisError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        BudisError::InvalidInput(msg.into())
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        BudisError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            BudisError::NotPositiveDefinite | BudisError::ElboDecrease { .. } | BudisError::AllReplicatesFailed
        )
    }
}
