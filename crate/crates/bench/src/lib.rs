//! Fixtures shared by the benchmarks.

use iph_core::linalg::{Mat, Vector};
use iph_core::steadystate::NetworkSpec;
use iph_core::{ConvexFunction, ExplicitConvexIph, Hamiltonian, IphSystem};

pub fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

pub fn m(r: usize, c: usize, x: &[f64]) -> Mat {
    Mat::from_row_slice(r, c, x)
}

/// Mass-spring with unit Coulomb friction on the velocity.
pub fn coulomb() -> ExplicitConvexIph {
    let k = ConvexFunction::weighted_l1(v(&[0.0, 1.0])).unwrap();
    ExplicitConvexIph::new(k, Hamiltonian::identity(2), Some(m(2, 2, &[0.0, 1.0, -1.0, 0.0])), None).unwrap()
}

/// Primal-dual dynamics for min ½q² subject to q = 1.
pub fn primal_dual() -> ExplicitConvexIph {
    let k = ConvexFunction::quadratic(m(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), v(&[0.0, 1.0, 0.0]), 0.0).unwrap();
    ExplicitConvexIph::new(k, Hamiltonian::identity(2), Some(m(2, 2, &[0.0, -1.0, 1.0, 0.0])), Some(m(2, 1, &[-1.0, 0.0])))
        .unwrap()
}

/// Gradient flow of ½(x − c)² with input gain b.
pub fn gradient(c: f64, b: f64) -> IphSystem {
    let k = ConvexFunction::quadratic(m(2, 2, &[1.0, 0.0, 0.0, 0.0]), v(&[-c, 0.0]), 0.5 * c * c).unwrap();
    let sys = ExplicitConvexIph::new(k, Hamiltonian::identity(1), None, Some(m(1, 1, &[b]))).unwrap();
    IphSystem::from_explicit(format!("g{c}"), sys).unwrap()
}

/// Two gradient systems in feedback.
pub fn coupled_network() -> NetworkSpec {
    NetworkSpec::wired(vec![gradient(1.0, 1.0), gradient(2.0, 0.5)], &[(0, 1)], vec![], Mat::zeros(0, 0)).unwrap()
}
