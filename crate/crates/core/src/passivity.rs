//! Discrete verifiers for incremental, differential and shifted passivity.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::Hamiltonian;
use crate::linalg::{self, Mat, Vector};
use crate::simulate::{rk4_step, ExplicitConvexIph, InputSignal, Trajectory};

/// Allowance on the fitted bound for higher-order terms of the two-grid estimate.
pub const FIT_SLACK: f64 = 1.25;
/// Absolute floor below which residuals count as roundoff.
pub const ROUNDOFF: f64 = 1e-12;

/// Per-step residuals of a dissipation inequality on a uniform grid; positive means violated.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    pub dt: f64,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PassivityVerdict {
    Holds,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub max_residual: f64,
    pub fitted_bound: f64,
    pub violations: Vec<usize>,
    pub verdict: PassivityVerdict,
}

impl ResidualSeries {
    pub fn max_positive(&self) -> f64 {
        self.residuals.iter().fold(0.0_f64, |m, &r| m.max(r))
    }

    /// Report against the bound C·dt.
    pub fn report(&self, c: f64) -> ResidualReport {
        let bound = c * self.dt;
        let limit = FIT_SLACK * bound + ROUNDOFF;
        let violations: Vec<usize> = (0..self.residuals.len()).filter(|&k| self.residuals[k] > limit).collect();
        ResidualReport {
            max_residual: self.max_positive(),
            fitted_bound: bound,
            verdict: if violations.is_empty() { PassivityVerdict::Holds } else { PassivityVerdict::Violated },
            violations,
        }
    }
}

/// C from residuals on a grid and on its halving: the left-point residual
/// has error ≈ C·dt, so the coarse/fine difference at shared times is ≈ C·dt/2.
pub fn fit_constant(coarse: &ResidualSeries, fine: &ResidualSeries) -> Result<f64> {
    if fine.residuals.len() < 2 * coarse.residuals.len() || (coarse.dt - 2.0 * fine.dt).abs() > 1e-12 * coarse.dt {
        return Err(Error::GridMismatch);
    }
    let worst = (0..coarse.residuals.len()).map(|k| (coarse.residuals[k] - fine.residuals[2 * k]).abs()).fold(0.0_f64, f64::max);
    Ok(2.0 * worst / coarse.dt)
}

/// Runs `series` at dt and dt/2, fits C and reports the coarse run.
pub fn two_grid<F>(series: F, dt: f64) -> Result<ResidualReport>
where
    F: Fn(f64) -> Result<ResidualSeries>,
{
    let coarse = series(dt)?;
    let fine = series(dt / 2.0)?;
    Ok(coarse.report(fit_constant(&coarse, &fine)?))
}

fn uniform_dt(traj: &Trajectory) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::InvalidArgument("trajectory needs at least two points".into()));
    }
    Ok(traj.times[1] - traj.times[0])
}

fn quadratic_q(h: &Hamiltonian) -> Result<&Mat> {
    match h {
        Hamiltonian::Quadratic { q, .. } => Ok(q),
        Hamiltonian::Separable(_) => {
            Err(Error::UnsupportedSystem("incremental and differential storage need a quadratic-affine Hamiltonian".into()))
        }
    }
}

/// Residuals of d/dt ½(x₁−x₂)ᵀQ(x₁−x₂) ≤ (u₁−u₂)ᵀ(y₁−y₂) with passive outputs.
pub fn check_incremental(sys: &ExplicitConvexIph, t1: &Trajectory, t2: &Trajectory) -> Result<ResidualSeries> {
    let q = quadratic_q(&sys.h)?;
    if !t1.same_grid(t2) {
        return Err(Error::GridMismatch);
    }
    let dt = uniform_dt(t1)?;
    let v = |k: usize| {
        let d = &t1.states[k] - &t2.states[k];
        0.5 * d.dot(&(q * &d))
    };
    let mut residuals = Vec::with_capacity(t1.len() - 1);
    for k in 0..t1.len() - 1 {
        let h = t1.times[k + 1] - t1.times[k];
        let du = &t1.inputs[k] - &t2.inputs[k];
        let dy = sys.passive_output(&t1.states[k], &t1.inputs[k])? - sys.passive_output(&t2.states[k], &t2.inputs[k])?;
        residuals.push((v(k + 1) - v(k)) / h - du.dot(&dy));
    }
    Ok(ResidualSeries { dt, residuals })
}

/// Perturbation variables along a nominal trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub dx: Vector,
    pub du: Vector,
    pub dy: Vector,
}

/// Tangent of the RK4 map along `nominal`: each step integrates (x, δx)
/// jointly from the nominal point, so the stages match the nominal run.
pub fn variational_integrate(
    sys: &ExplicitConvexIph,
    nominal: &Trajectory,
    dx0: &Vector,
    du: &InputSignal,
    u: &InputSignal,
) -> Result<Vec<VariationalState>> {
    if !sys.is_smooth() {
        return Err(Error::NonSmoothVectorField("variational equation needs a smooth k".into()));
    }
    let n = sys.n();
    if dx0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: dx0.len() });
    }
    du.validate()?;
    if du.dim() != sys.m() {
        return Err(Error::DimensionMismatch { expected: sys.m(), got: du.dim() });
    }
    let field = |z: &Vector, t: f64| -> Result<Vector> {
        let x = z.rows(0, n).into_owned();
        let d = z.rows(n, n).into_owned();
        let ut = u.at(t);
        let (a, b, _, _) = sys.jacobians(&x, &ut)?;
        let fx = sys.vector_field(&x, &ut)?;
        let fd = a * d + b * du.at(t);
        Ok(linalg::vcat(&[&fx, &fd]))
    };
    let mut out = Vec::with_capacity(nominal.len());
    let mut dx = dx0.clone();
    for k in 0..nominal.len() {
        let t = nominal.times[k];
        let x = &nominal.states[k];
        let duk = du.at(t);
        let (_, _, c, d) = sys.jacobians(x, &nominal.inputs[k])?;
        out.push(VariationalState { dx: dx.clone(), du: duk.clone(), dy: c * &dx + d * &duk });
        if k + 1 == nominal.len() {
            break;
        }
        let h = nominal.times[k + 1] - t;
        let z = rk4_step(&field, &linalg::vcat(&[x, &dx]), t, h)?;
        dx = z.rows(n, n).into_owned();
    }
    Ok(out)
}

/// Residuals of d/dt ½δxᵀQδx ≤ δuᵀδy.
pub fn check_differential(sys: &ExplicitConvexIph, nominal: &Trajectory, var: &[VariationalState]) -> Result<ResidualSeries> {
    let q = quadratic_q(&sys.h)?;
    if var.len() != nominal.len() {
        return Err(Error::GridMismatch);
    }
    let dt = uniform_dt(nominal)?;
    let p = |s: &VariationalState| 0.5 * s.dx.dot(&(q * &s.dx));
    let residuals = (0..var.len() - 1)
        .map(|k| {
            let h = nominal.times[k + 1] - nominal.times[k];
            (p(&var[k + 1]) - p(&var[k])) / h - var[k].du.dot(&var[k].dy)
        })
        .collect();
    Ok(ResidualSeries { dt, residuals })
}

/// H″(x₁) − H″(x₂) for a scalar Hamiltonian; nonzero values rule out a
/// C² incremental storage for the nonlinear integrator with this H.
pub fn incremental_storage_obstruction(h: &Hamiltonian, x1: f64, x2: f64) -> Result<f64> {
    if h.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: h.dim() });
    }
    let d2 = |x: f64| h.hessian(&Vector::from_element(1, x)).map(|m| m[(0, 0)]);
    Ok(d2(x1)? - d2(x2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexfun::ConvexFunction;
    use crate::hamiltonian::Piece;
    use crate::simulate::integrate_rk4;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn gradient() -> ExplicitConvexIph {
        let k = ConvexFunction::quadratic(Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), v(&[-1.0, 0.0]), 0.5).unwrap();
        ExplicitConvexIph::new(k, Hamiltonian::identity(1), None, Some(Mat::from_element(1, 1, 1.0))).unwrap()
    }

    /// ẋ = −x³ − u with H = x⁴/4 replaced by a smooth strictly convex energy.
    fn nonlinear() -> ExplicitConvexIph {
        let k = ConvexFunction::quadratic(Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), v(&[0.0, 0.0]), 0.0).unwrap();
        let h = Hamiltonian::separable(vec![Piece::EvenPower { coef: 0.25, p: 4 }]).unwrap();
        ExplicitConvexIph::new(k, h, None, Some(Mat::from_element(1, 1, 1.0))).unwrap()
    }

    fn sine(a: f64, w: f64) -> InputSignal {
        let times: Vec<f64> = (0..=400).map(|k| k as f64 * 0.025).collect();
        let values = times.iter().map(|t| v(&[a * (w * t).sin()])).collect();
        InputSignal::Sampled { times, values }
    }

    #[test]
    fn identical_trajectories_have_zero_residual() {
        let sys = gradient();
        let tr = integrate_rk4(&sys, &v(&[0.3]), &sine(1.0, 2.0), 5.0, 0.01).unwrap();
        let s = check_incremental(&sys, &tr, &tr).unwrap();
        assert!(s.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn incremental_passivity_of_gradient_flow() {
        let sys = gradient();
        let rep = two_grid(
            |dt| {
                let a = integrate_rk4(&sys, &v(&[0.0]), &sine(1.0, 2.0), 5.0, dt)?;
                let b = integrate_rk4(&sys, &v(&[1.0]), &sine(-0.5, 3.0), 5.0, dt)?;
                check_incremental(&sys, &a, &b)
            },
            0.01,
        )
        .unwrap();
        assert_eq!(rep.verdict, PassivityVerdict::Holds, "{rep:?}");
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let sys = gradient();
        let a = integrate_rk4(&sys, &v(&[0.0]), &InputSignal::zero(1), 1.0, 0.1).unwrap();
        let b = integrate_rk4(&sys, &v(&[0.0]), &InputSignal::zero(1), 1.0, 0.05).unwrap();
        assert_eq!(check_incremental(&sys, &a, &b), Err(Error::GridMismatch));
    }

    #[test]
    fn zero_perturbation_stays_zero() {
        let sys = nonlinear();
        let u = sine(1.0, 1.0);
        let nom = integrate_rk4(&sys, &v(&[1.0]), &u, 2.0, 0.01).unwrap();
        let var = variational_integrate(&sys, &nom, &v(&[0.0]), &InputSignal::zero(1), &u).unwrap();
        assert!(var.iter().all(|s| s.dx[0] == 0.0 && s.dy[0] == 0.0));
    }

    #[test]
    fn variational_matches_finite_differences() {
        let sys = nonlinear();
        let u = sine(1.0, 1.0);
        let x0 = v(&[1.0]);
        let eps = 1e-5;
        let nom = integrate_rk4(&sys, &x0, &u, 2.0, 0.01).unwrap();
        let pert = integrate_rk4(&sys, &(&x0 + v(&[eps])), &u, 2.0, 0.01).unwrap();
        let var = variational_integrate(&sys, &nom, &v(&[1.0]), &InputSignal::zero(1), &u).unwrap();
        for k in (0..nom.len()).step_by(20) {
            let fd = (pert.states[k][0] - nom.states[k][0]) / eps;
            assert!((fd - var[k].dx[0]).abs() <= 1e-3 * var[k].dx[0].abs(), "step {k}: {fd} vs {}", var[k].dx[0]);
        }
    }

    #[test]
    fn linear_variation_equals_trajectory_difference() {
        let sys = gradient();
        let u = sine(1.0, 1.0);
        let du = sine(0.2, 3.0);
        let nom = integrate_rk4(&sys, &v(&[0.0]), &u, 2.0, 0.01).unwrap();
        let sum = InputSignal::Sampled {
            times: (0..=400).map(|k| k as f64 * 0.025).collect(),
            values: (0..=400).map(|k| u.at(k as f64 * 0.025) + du.at(k as f64 * 0.025)).collect(),
        };
        let other = integrate_rk4(&sys, &v(&[0.5]), &sum, 2.0, 0.01).unwrap();
        let var = variational_integrate(&sys, &nom, &v(&[0.5]), &du, &u).unwrap();
        for ((o, n), d) in other.states.iter().zip(&nom.states).zip(&var) {
            assert!((o[0] - n[0] - d.dx[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn differential_passivity_of_gradient_flow() {
        let sys = gradient();
        let u = sine(1.0, 1.0);
        let rep = two_grid(
            |dt| {
                let nom = integrate_rk4(&sys, &v(&[0.0]), &u, 5.0, dt)?;
                let var = variational_integrate(&sys, &nom, &v(&[1.0]), &sine(0.7, 4.0), &u)?;
                check_differential(&sys, &nom, &var)
            },
            0.01,
        )
        .unwrap();
        assert_eq!(rep.verdict, PassivityVerdict::Holds, "{rep:?}");
    }

    #[test]
    fn unforced_variation_contracts() {
        let sys = gradient();
        let u = sine(1.0, 1.0);
        let nom = integrate_rk4(&sys, &v(&[0.0]), &u, 5.0, 0.01).unwrap();
        let var = variational_integrate(&sys, &nom, &v(&[1.0]), &InputSignal::zero(1), &u).unwrap();
        assert!(var.windows(2).all(|w| w[1].dx.norm() <= w[0].dx.norm()));
    }

    #[test]
    fn quartic_obstruction() {
        let h = Hamiltonian::separable(vec![Piece::EvenPower { coef: 0.25, p: 4 }]).unwrap();
        assert_eq!(incremental_storage_obstruction(&h, 1.0, 0.0).unwrap(), 3.0);
        assert_eq!(incremental_storage_obstruction(&h, 0.7, 0.7).unwrap(), 0.0);
        assert!(incremental_storage_obstruction(&Hamiltonian::identity(2), 0.0, 1.0).is_err());
    }

    #[test]
    fn separable_hamiltonian_is_refused_for_incremental_checks() {
        let sys = nonlinear();
        let tr = integrate_rk4(&sys, &v(&[0.5]), &InputSignal::zero(1), 1.0, 0.1).unwrap();
        assert!(matches!(check_incremental(&sys, &tr, &tr), Err(Error::UnsupportedSystem(_))));
    }

    proptest! {
        #[test]
        fn obstruction_vanishes_for_quadratics(q in 0.0..10.0f64, a in -5.0..5.0f64, x1 in -10.0..10.0f64, x2 in -10.0..10.0f64) {
            let h = Hamiltonian::separable(vec![Piece::Quadratic { q, a }]).unwrap();
            prop_assert_eq!(incremental_storage_obstruction(&h, x1, x2).unwrap(), 0.0);
            let hq = Hamiltonian::quadratic(Mat::from_element(1, 1, q), v(&[a]), 1.0).unwrap();
            prop_assert_eq!(incremental_storage_obstruction(&hq, x1, x2).unwrap(), 0.0);
        }

        #[test]
        fn obstruction_is_antisymmetric(c in 0.0..3.0f64, x1 in -3.0..3.0f64, x2 in -3.0..3.0f64) {
            let h = Hamiltonian::separable(vec![Piece::EvenPower { coef: c, p: 4 }]).unwrap();
            let a = incremental_storage_obstruction(&h, x1, x2).unwrap();
            let b = incremental_storage_obstruction(&h, x2, x1).unwrap();
            prop_assert_eq!(a, -b);
        }
    }
}
