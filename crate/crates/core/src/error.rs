use thiserror::Error;

/// Errors raised by the path-integration library.
#[derive(Debug, Error)]
pub enum FkError {
    #[error("invalid input function: non-finite value {value} at point {point:?}")]
    InvalidInputFunction { point: Vec<f64>, value: f64 },

    #[error("invalid integrand sample: non-finite value {value} at sample {index} (times {times:?}, points {points:?})")]
    InvalidIntegrandSample {
        index: usize,
        times: Vec<f64>,
        points: Vec<f64>,
        value: f64,
    },

    #[error("degenerate time partition: zero-length interval between {left} and {right}")]
    DegenerateTimePartition { left: f64, right: f64 },

    #[error("oracle dimension limit: (k+1)*d = {dims} exceeds {limit}")]
    OracleDimensionLimit { dims: usize, limit: usize },

    #[error("sparse grid budget exceeded: {nodes} nodes needed at level {level}, cap is {cap}")]
    SparseGridBudgetExceeded { nodes: usize, level: usize, cap: usize },

    #[error("quantum encoding range exceeded: |f| = {value} > bound {bound} at sample {index}")]
    QuantumRangeExceeded { index: usize, value: f64, bound: f64 },

    #[error("potential unbounded above on sampled paths: exponent overflow on path {path}")]
    PotentialOverflow { path: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FkError> = std::result::Result<T, E>;
