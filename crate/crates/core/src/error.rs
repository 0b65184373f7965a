use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("inverse gradient bracket not found for y = {y} after {doublings} doublings")]
    BracketFailure { y: f64, doublings: usize },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("matrix not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("singular linear system at pivot {0}")]
    Singular(usize),

    #[error("linearly dependent constraints (rank {rank} < {rows})")]
    DependentConstraints { rank: usize, rows: usize },

    #[error("duplicate data points: {0}")]
    DuplicateData(String),

    #[error("data point {x} lies outside {what}")]
    OutOfRange { x: f64, what: String },

    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("function is not in the absolute-value class (constraint residual {0:e})")]
    Infeasible(f64),

    #[error("zero density at node b = {0}")]
    ZeroDensity(f64),

    #[error("not enough snapshots: need {need}, have {have}")]
    TooFewSnapshots { need: usize, have: usize },

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;
