use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown leg `{0}`")]
    UnknownLeg(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("matrix is not hermitian (residual {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not unitary (residual {0:.3e})")]
    NotUnitary(f64),
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("basis does not close into a group")]
    NotAGroup,
    #[error("basis group is not abelian up to phase")]
    NonAbelian,
    #[error("operation requires a Weyl-Heisenberg basis")]
    NotWeylHeisenberg,
    #[error("local dimension {0} is not prime")]
    NonPrimeDimension(usize),
    #[error("inadmissible clifford map: {0}")]
    Inadmissible(String),
    #[error("symmetry check failed: {0}")]
    SymmetryFailed(String),
    #[error("defect stuck at {site}: {detail}")]
    DefectStuck { site: String, detail: String },
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
