use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("term {term} does not conserve the quantum numbers of the sector")]
    SectorViolation { term: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("iterative solver did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("operator pool contains a non-Hermitian generator at position {0}")]
    NonHermitianPool(usize),
    #[error("iteration cap {0} reached")]
    IterationCap(usize),
    #[error("constraints are infeasible")]
    InfeasibleConstraints,
    #[error("no solution: drive vector has weight {residual:e} in the kernel")]
    NoSolution { residual: f64 },
    #[error("singular linear system at {context}")]
    SingularSystem { context: String },
    #[error("state is not an eigenstate of the Hamiltonian (residual {residual:e})")]
    NotGroundState { residual: f64 },
    #[error("ground state is degenerate (gap {gap:e})")]
    DegenerateGroundState { gap: f64 },
    #[error("iteration diverged: {0}")]
    DivergenceDetected(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
