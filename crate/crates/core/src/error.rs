use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("layer {0} has no occupied sites")]
    EmptyLayer(&'static str),
    #[error("zero displacement (self-interaction)")]
    ZeroDisplacement,
    #[error("operation requires a fully filled periodic lattice: {0}")]
    RequiresPeriodic(String),
    #[error("BdG matrix is defective: condition estimate {condition:.3e}, residual {residual:.3e}")]
    Defective { condition: f64, residual: f64 },
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error("integrator step underflow at t = {time} (trajectory {trajectory}, step {step:.3e})")]
    StepUnderflow { time: f64, trajectory: usize, step: f64 },
    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),
    #[error("exact diagonalization limited to {max} spins, got {got}")]
    TooManySpins { max: usize, got: usize },
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
