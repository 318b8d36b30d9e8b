use alloc::string::String;

/// Everything that can go wrong inside the estimation and inference code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("value {value} lies outside the basis domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("structural mismatch: {0}")]
    Structural(String),
    #[error("penalized normal equations are numerically singular ({0})")]
    Singular(String),
    #[error("degenerate smoothing: trace of the hat matrix {edf} is not below the row count {rows}")]
    DegenerateSmoothing { edf: f64, rows: usize },
    #[error("insufficient bootstrap replicates: {replicates} replicates cannot resolve the {level} quantile")]
    InsufficientReplicates { replicates: usize, level: f64 },
    #[error("covariance matrix is indefinite: smallest eigenvalue {min_eigenvalue} exceeds tolerance {tolerance}")]
    Covariance { min_eigenvalue: f64, tolerance: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{failed} of {requested} bootstrap replicates failed to fit (allowed: {allowed}); last error: {last}")]
    TooManyFailures { failed: usize, requested: usize, allowed: usize, last: String },
}

pub type Result<T> = core::result::Result<T, Error>;
