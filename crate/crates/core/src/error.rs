use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is empty")]
    EmptyMatrix,

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("relative tolerance {0} must lie in (0, 1)")]
    InvalidTolerance(f64),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error(
        "pre-activation of hidden node {node} on input row {row} is {value:e}, \
         too close to the activation boundary"
    )]
    BoundaryActivation { row: usize, node: usize, value: f64 },

    #[error("column {0} of the weight matrix is zero")]
    ZeroColumn(usize),

    #[error("weight matrix has rank {rank}, expected full row rank {rows}")]
    RankDeficientW { rank: usize, rows: usize },

    #[error("orthant {0} does not intersect the subspace")]
    EmptyIntersection(String),

    #[error("observability certificate failed: rank(chi(S)) = {rank} < {hidden}")]
    CertificateFailed { rank: usize, hidden: usize },

    #[error("input design verification failed: {0}")]
    ConstructionFailed(String),

    #[error(
        "{inputs} inputs exceed {hidden} hidden nodes; reduce the redundant inputs first"
    )]
    MoreInputsThanHidden { inputs: usize, hidden: usize },

    #[error("input sequence is not persistently exciting: rank {rank} < {dim}")]
    NotPersistentlyExciting { rank: usize, dim: usize },

    #[error("estimate is not a member of the observable neighborhood")]
    InfeasibleStart,

    #[error("invalid batch schedule: {0}")]
    InvalidSchedule(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(expected: impl ToString, got: impl ToString) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
