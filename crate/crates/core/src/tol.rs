//! Numerical tolerances shared across modules.

/// Minimum eigenvalue accepted for a positive semidefinite matrix.
pub const PSD: f64 = 1e-10;
/// Absolute tolerance for membership in an indicator's set.
pub const DOMAIN: f64 = 1e-9;
/// Relative singular-value cutoff for rank decisions.
pub const RANK: f64 = 1e-10;
/// Symmetry defect allowed for a quadratic Hamiltonian.
pub const SYMMETRY: f64 = 1e-12;
/// Skew-symmetry defect allowed for a skew graph.
pub const SKEW: f64 = 1e-12;
/// Negative defect tolerated by sampled monotonicity checks.
pub const DEFECT: f64 = 1e-10;
/// Residual target for inner proximal iterations.
pub const PROX_RESIDUAL: f64 = 1e-10;
/// Iteration budget for inner proximal iterations.
pub const PROX_MAX_ITER: usize = 10_000;
