use thiserror::Error;

/// Errors surfaced by the linear-algebra kernels, instance handling and solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("complementation requires a nonsingular covariance (min eigenvalue {min_eig:e})")]
    ComplementRequiresFullRank { min_eig: f64 },

    #[error("point outside the domain of the Gamma function (rank below s)")]
    NotInDomain,

    #[error("no index satisfies the j-hat characterization")]
    NoValidJ,

    #[error("no dual certificate available at this point")]
    NoCertificate,

    #[error("matrix has rank {achieved}, below the requested {requested}")]
    RankDeficient { requested: usize, achieved: usize },

    #[error("no convergence after {iterations} sweeps (affine residual {affine:e}, psd violation {psd:e})")]
    NoConvergence {
        iterations: usize,
        affine: f64,
        psd: f64,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
