use thiserror::Error;

/// Errors raised by the pricing library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("½σσᵀ is not diagonally dominant at t = {t}, x = {x:?}")]
    DiagonalDominanceViolated { t: f64, x: Vec<f64> },

    #[error("negative stencil coefficient {value} for direction {k} at t = {t}, x = {x:?}")]
    NegativeCoefficient { k: i32, value: f64, t: f64, x: Vec<f64> },

    #[error("lattice would hold {nodes} nodes, above the cap of {cap}")]
    GridTooLarge { nodes: u128, cap: u128 },

    #[error("neighbour of {index:?} along direction {k} lies outside the enumerated lattice")]
    NeighborOutsideEnumeration { index: Vec<i64>, k: i32 },

    #[error("node at time level {level} is terminal; no forward time difference exists")]
    TerminalLevel { level: usize },

    #[error("inner solve at time level {level} did not converge (residual {residual:e})")]
    InnerSolveDiverged { level: usize, residual: f64 },

    #[error("fixed-point iteration stopped after {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("query point {x:?} is not covered by the lattice")]
    OutsideLattice { x: Vec<f64> },

    #[error("{0}")]
    Study(String),

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
