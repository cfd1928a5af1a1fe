use thiserror::Error;

pub type Result<T> = std::result::Result<T, TapError>;

#[derive(Debug, Error)]
pub enum TapError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid probability vector: {0}")]
    InvalidProbVector(String),

    #[error("invalid target set: {0}")]
    InvalidTargetSet(String),

    #[error("invalid divergence: {0}")]
    InvalidDivergence(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid cost model: {0}")]
    CostModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty class: label {0} is absent from the training split")]
    EmptyClass(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("optimization diverged after {iterations} iterations (last objective {last_objective})")]
    Diverged {
        iterations: usize,
        last_objective: f64,
        trace: Vec<f64>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
