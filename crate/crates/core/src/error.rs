use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("eigenpair index {k} out of range 1..={dim}")]
    EigenIndex { k: usize, dim: usize },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("invalid potential: {0}")]
    Potential(String),

    #[error(
        "box QP did not converge after {iterations} iterations (projected gradient {residual:.3e})"
    )]
    QpNotConverged { iterations: usize, residual: f64 },

    #[error("cone projection did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    ProjectionNotConverged { iterations: usize, residual: f64 },

    #[error("set-relative slope solve failed: {0}")]
    SetSlope(String),

    #[error(
        "point is not inside the constraint set (distance {distance:.3e} > radius {radius:.3e})"
    )]
    OutsideSet { distance: f64, radius: f64 },

    #[error("invalid flow configuration: {0}")]
    FlowConfig(String),

    #[error("no linking window: {reason}")]
    NoLinkingWindow {
        reason: String,
        scan: Vec<crate::linking::ScanRow>,
    },

    #[error("linking gap violated: alpha = {alpha:.6e} >= beta = {beta:.6e}")]
    GapViolation { alpha: f64, beta: f64 },

    #[error("invariance violation: {0}")]
    InvarianceViolation(String),

    #[error("minimax did not converge: {0}")]
    NotConverged(String),

    #[error("critical point refinement failed: {0}")]
    Refinement(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
