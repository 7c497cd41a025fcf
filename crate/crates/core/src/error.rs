use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite value from `{function}` at {at}")]
    NonFiniteEvaluation { function: &'static str, at: f64 },
    #[error("diffusivity vanishes at r = {r} > 0; drift-only swarming is not supported")]
    DegenerateDiffusion { r: f64 },
    #[error("quadrature of (D(s)/s)^(1/2) on [0, {r}] did not converge")]
    QuadratureDivergence { r: f64 },
    #[error("ratio E/zeta2' undefined at r = {r}: zeta2' vanishes while E = {e}")]
    RatioUndefined { r: f64, e: f64 },
    #[error("discrete hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("negative initial data {value} in bin {bin}, cell {cell}")]
    NegativeInitialData { bin: usize, cell: usize, value: f64 },
    #[error("field has {got} cells, grid has {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("negative field value {value} at cell {cell}")]
    NegativeField { cell: usize, value: f64 },
    #[error("unstable step at t = {t}: {reason}")]
    UnstableStep { t: f64, reason: String },
    #[error("inadmissible test function: {0}")]
    InadmissibleTestFunction(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    ConfigInvalid(Vec<String>),
    #[error("configuration does not match the exponential family: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
