use thiserror::Error;

use crate::cost::Modality;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtError {
    #[error("{modality} vector {index} has zero norm")]
    ZeroNormVector { index: usize, modality: Modality },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid marginal `{name}`: {reason}")]
    InvalidMarginal { name: &'static str, reason: String },

    #[error("marginal `{name}` has a zero weight at index {index}; scaling solvers divide by marginals")]
    ZeroMarginal { name: &'static str, index: usize },

    #[error("non-finite scaling vector at iteration {iteration}")]
    NumericalOverflow { iteration: usize },

    #[error("exact oracle limited to {max} cells, got {rows}x{cols}")]
    OracleSizeExceeded { rows: usize, cols: usize, max: usize },

    #[error("invalid solver parameter: {0}")]
    InvalidParameter(String),

    #[error("transportation simplex exceeded {0} pivots")]
    PivotLimit(usize),
}
