use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("subsystem index {index} out of range for {count} subsystems")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("total dimension {0} exceeds the dense limit")]
    TooLarge(usize),

    #[error("vector is not normalized (norm {0})")]
    NotNormalized(f64),

    #[error("operator is not {0}")]
    WrongKind(&'static str),

    #[error("invalid projector set: {0}")]
    InvalidProjectors(String),

    #[error("zero-probability branch selected")]
    ZeroProbabilityBranch,

    #[error("spectrum is not on the meter lattice: {0}")]
    OffLattice(String),

    #[error("meter dimension {d} too small for {needed} distinct sums")]
    MeterTooSmall { d: usize, needed: usize },

    #[error("invalid meter dimension {0}")]
    InvalidMeterDimension(usize),

    #[error("modulus {modulus} does not equal D*spacing = {expected}")]
    ModulusMismatch { modulus: f64, expected: f64 },

    #[error("observable is not positive definite (min eigenvalue {0})")]
    NotPositive(f64),

    #[error("degenerate spectrum: {0}")]
    Degenerate(String),

    #[error("branch budget of {0} exceeded")]
    BranchBudget(usize),

    #[error("ebit pool exhausted")]
    PoolExhausted,

    #[error("state outside the required subspace (weight {0})")]
    OutsideSubspace(f64),

    #[error("{0} is not an eigenvalue")]
    NotEigenvalue(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal invariant breached: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
