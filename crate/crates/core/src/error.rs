use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by fitting, imputation and I/O.
#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid block specification: {0}")]
    InvalidBlocks(String),

    #[error("column mismatch: {0}")]
    ColumnMismatch(String),

    #[error("dataset {dataset} is empty")]
    EmptyDataset { dataset: char },

    #[error("non-finite value in dataset {dataset} at row {row}, column `{column}`")]
    NonFinite {
        dataset: char,
        row: usize,
        column: String,
    },

    #[error("{path}: cannot parse row {row}, column `{column}`: {value:?}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient rows: {0}")]
    InsufficientRows(String),

    #[error("singular matrix ({what}): reciprocal condition number {rcond:.3e}")]
    Singular { what: String, rcond: f64 },

    #[error("rank-deficient design matrix for dataset {dataset}")]
    RankDeficient { dataset: char },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("identification constraint violated: relative Frobenius error {0:.3e}")]
    ConstraintViolation(f64),

    #[error("non-finite log-likelihood at row {row}")]
    NonFiniteLikelihood { row: usize },

    #[error("all component densities vanish at row {row}")]
    ZeroDensityRow { row: usize },

    #[error("{what} lost positive definiteness at iteration {iteration}")]
    NotPositiveDefinite { what: String, iteration: usize },

    #[error("component {component} degenerated: effective rows {mass:.2} < {required}")]
    DegenerateComponent {
        component: usize,
        mass: f64,
        required: usize,
    },

    #[error("all {0} restarts failed; last error: {1}")]
    AllRestartsFailed(usize, String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FusionError {
    /// True for failures caused by the numbers rather than by the inputs'
    /// shape or syntax.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FusionError::Singular { .. }
                | FusionError::RankDeficient { .. }
                | FusionError::ConstraintViolation(_)
                | FusionError::NonFiniteLikelihood { .. }
                | FusionError::ZeroDensityRow { .. }
                | FusionError::NotPositiveDefinite { .. }
                | FusionError::DegenerateComponent { .. }
                | FusionError::AllRestartsFailed(..)
                | FusionError::InvalidParams(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, FusionError>;
