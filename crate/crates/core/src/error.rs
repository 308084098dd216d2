use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cluster assignment: {0}")]
    InvalidAssignment(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("singular input: {0}")]
    Singular(String),

    #[error("design matrix X is rank deficient (X^T X is not invertible)")]
    RankDeficientDesign,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("row {0} contains only zeros")]
    DegenerateRow(usize),

    #[error("column {0} contains only zeros")]
    DegenerateColumn(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("AUC is undefined: {0}")]
    UndefinedAuc(String),

    #[error("graphical lasso did not converge after {iterations} iterations")]
    GlassoNotConverged {
        iterations: usize,
        omega: Box<DMatrix<f64>>,
        sigma: Box<DMatrix<f64>>,
    },

    #[error("penalty path failed at lambda = {lambda}: {source}")]
    PathFailure {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
