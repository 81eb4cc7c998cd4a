// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("split index {k} outside 1..={max} (n = {n})")]
    SplitOutOfRange { k: usize, n: usize, max: usize },

    #[error("dyadic grid is empty for n = {n}, trimming = {varpi} (need n >= 4 * trimming)")]
    GridEmpty { n: usize, varpi: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("search bookkeeping violated: {0}")]
    Search(String),

    #[error("no change point detected; {0} is undefined")]
    NoChange(&'static str),

    #[error("estimated differential parameter is identically zero")]
    ZeroDelta,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("target lies outside the column space of the covariance root (residual {residual:e})")]
    OutsideColumnSpace { residual: f64 },

    #[error("unknown {what} '{name}' (available: {available})")]
    Unknown {
        what: &'static str,
        name: String,
        available: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ScanError {
    /// Errors caused by the input data rather than by how the library was driven.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            ScanError::NonFinite { .. }
                | ScanError::Shape(_)
                | ScanError::Csv(_)
                | ScanError::Io(_)
                | ScanError::Json(_)
                | ScanError::GridEmpty { .. }
                | ScanError::OutsideColumnSpace { .. }
                | ScanError::NotSymmetric(_)
        )
    }
}

pub type Result<T, E = ScanError> = std::result::Result<T, E>;
