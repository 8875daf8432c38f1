use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("dense work refused: {entries} entries exceeds limit {limit}")]
    SizeLimit { entries: usize, limit: usize },

    #[error("matrix is not Hermitian: relative asymmetry {0:.3e}")]
    NotHermitian(f64),

    #[error("factor columns are not orthonormal: max residual {0:.3e}")]
    NotOrthonormal(f64),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("requested rank {requested} exceeds available rank {available}")]
    RankExceeds { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("adjoint map is inconsistent with forward map: relative residual {0:.3e}")]
    AdjointMismatch(f64),

    #[error("dense SVD failed to converge")]
    SvdFailed,

    #[error("measurement has imaginary residue {0:.3e} above tolerance")]
    ImaginaryResidue(f64),

    #[error("constraint {0} requires a symmetric factor")]
    ConstraintNeedsSymmetric(&'static str),

    #[error("step size too large: f grew from {f0:.3e} to {f:.3e}")]
    StepTooLarge { f0: f64, f: f64 },

    #[error("input is exactly rank deficient: {0}")]
    DegenerateRank(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
