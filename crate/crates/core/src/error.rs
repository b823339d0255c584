use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("polytope is unbounded")]
    Unbounded,

    #[error("vertex enumeration limited to dimension {cap}, got {dim}")]
    DimensionTooLarge { dim: usize, cap: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("state {0:?} lies outside every region")]
    OutsideDomain(Vec<f64>),

    #[error("{count} switching sequences exceed the enumeration cap of {cap}")]
    TooManySequences { count: u128, cap: u128 },

    #[error("Riccati iteration did not converge after {0} iterations")]
    RiccatiDiverged(usize),

    #[error("invariant set iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("initial state is outside the learned feasible set")]
    InitialStateInfeasible,

    #[error("fixed-sequence problem infeasible at step {step}: recursive feasibility broken")]
    RecursiveFeasibilityBroken { step: usize },

    #[error("unsupported file version {0:?}")]
    UnsupportedVersion(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
