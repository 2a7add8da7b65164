use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("constraint violated: {what} (defect {defect:.3e})")]
    Constraint { what: String, defect: f64 },

    #[error("degenerate input at index {index}: {reason}")]
    Degenerate { index: usize, reason: String },

    #[error("metric not positive definite at node {node}")]
    Metric { node: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("structure error: {0}")]
    Structure(String),

    #[error("product structure is {sign}identity; k = {k} is outside 1..={max}")]
    Exclusion { sign: char, k: usize, max: usize },

    #[error("reconstruction left the product at node {node} (defect {defect:.3e})")]
    Reconstruction { node: usize, defect: f64 },

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("bad parameter: {0}")]
    Parameter(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
