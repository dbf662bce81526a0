//! Convex-analytic tools for incrementally port-Hamiltonian systems.

pub mod convexfun;
pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod passivity;
pub mod relations;
pub mod simulate;
pub mod steadystate;
pub mod tol;

pub use convexfun::{ConvexFunction, ExtendedReal, Node, QuadraticForm};
pub use error::{Error, Result};
pub use hamiltonian::{Hamiltonian, Piece};
pub use passivity::{ResidualReport, ResidualSeries, VariationalState};
pub use relations::{MonotoneRelation, PortSpace};
pub use simulate::{ExplicitConvexIph, InputSignal, IphSystem, Trajectory};
pub use steadystate::{EquilibriumReport, NetworkSpec};
