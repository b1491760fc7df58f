use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("location ({x}, {y}) lies outside the unit square")]
    OutOfDomain { x: f64, y: f64 },

    #[error("time step {t} outside the field horizon 0..{horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },

    #[error("query lattice resolution {lattice} does not match field resolution {field}")]
    MisalignedLattice { lattice: usize, field: usize },

    #[error("Gram matrix is not positive definite ({observations} observations); add observation noise or diagonal jitter")]
    SingularGram { observations: usize },

    #[error("shape mismatch in {op}: {lhs} is {lhs_shape:?}, {rhs} is {rhs_shape:?}")]
    Shape {
        op: &'static str,
        lhs: &'static str,
        lhs_shape: Vec<usize>,
        rhs: &'static str,
        rhs_shape: Vec<usize>,
    },

    #[error("node {target} is not a neighbor of node {current}")]
    NotANeighbor { current: usize, target: usize },

    #[error("edge of length {edge} exceeds the remaining budget {remaining}")]
    BudgetExceeded { edge: f64, remaining: f64 },

    #[error("no feasible neighbor from node {node}")]
    NoFeasibleAction { node: usize },

    #[error("unknown parameter `{0}`")]
    MissingParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown prediction mode `{0}`")]
    UnknownMode(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("checkpoint {0} not found")]
    MissingCheckpoint(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
