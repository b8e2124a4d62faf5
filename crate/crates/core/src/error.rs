use crate::tree::NodeKey;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cell contains no points")]
    EmptyCell,

    #[error("input matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    AsymmetricInput { asymmetry: f64 },

    #[error("input point cloud is empty")]
    EmptyInput,

    #[error("policy demands dimension {requested} but cell {node} has only {cell_size} points")]
    DimensionExceedsCell {
        node: NodeKey,
        requested: usize,
        cell_size: usize,
    },

    #[error("node {0} not found in model")]
    NodeNotFound(NodeKey),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("coefficients were produced by a different model (id {coeffs:#x}, model {model:#x})")]
    ModelMismatch { coeffs: u64, model: u64 },

    #[error("operation not applicable: {0}")]
    NotApplicable(String),

    #[error("inconsistent encoding-cost dimensions: {0}")]
    CostModelViolation(String),

    #[error("invalid generator spec: {0}")]
    SpecError(String),

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
