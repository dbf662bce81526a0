use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPositiveSemidefinite { min_eig: f64 },

    #[error("affine constraint set is empty (residual {residual:e})")]
    InfeasibleConstraint { residual: f64 },

    #[error("no conjugate rule applies: {0}")]
    UnsupportedConjugate(String),

    #[error("no proximal rule applies: {0}")]
    UnsupportedProx(String),

    #[error("conjugated block is singular without a compatible range condition")]
    SingularBlock,

    #[error("iteration did not converge (residual {residual:e} after {iterations} iterations)")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("relation is not a Dirac structure")]
    NotDirac,

    #[error("Khatri equation residual {residual:e} exceeds tolerance")]
    KhatriSolveFailed { residual: f64 },

    #[error("port mismatch: {0}")]
    PortMismatch(String),

    #[error("inner infimum is unbounded below along {direction:?}")]
    UnboundedInnerProblem { direction: Vec<f64> },

    #[error("geometry is not polyhedral: {0}")]
    UnsupportedGeometry(String),

    #[error("no x with grad H(x) = e (best residual {residual:e})")]
    NoSolution { x: Vec<f64>, residual: f64 },

    #[error("vector field is not smooth: {0}")]
    NonSmoothVectorField(String),

    #[error("state norm exceeded bound at step {step}")]
    StepUnstable { step: usize },

    #[error("implicit step {step} did not converge (residual {residual:e})")]
    InnerNonConvergence { step: usize, residual: f64 },

    #[error("objective is unbounded below along {direction:?}")]
    UnboundedObjective { direction: Vec<f64> },

    #[error("iteration limit reached (projected gradient norm {residual:e})")]
    MaxIterations { residual: f64 },

    #[error("state recovery failed for system {system}: {reason}")]
    StateRecoveryFailed { system: usize, reason: String },

    #[error("trajectory grids differ")]
    GridMismatch,

    #[error("unsupported system: {0}")]
    UnsupportedSystem(String),
}

pub type Result<T> = std::result::Result<T, Error>;
