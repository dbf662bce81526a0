//! Steady-state relations, steady generating functions and network equilibria.
//!
//! Sign conventions. For an explicit system with generator L(e, u) = k(e, u) + eᵀBu
//! the steady generating function is K_s(u) = sup_e[−L(e, u)], so at a steady
//! point ∇K_s(ū) = −ȳ with ȳ = ∂ᵤk + Bᵀē. In a network, block i carries the pair
//! (u_i, w_i) with w_i = ∇K_s,i(u_i); blocks in π use f_i = u_i and e_i = w_i,
//! the others f_i = w_i and e_i = u_i. The primal program minimizes
//! Σ_{i∈π} K_s,i(f_i) + Σ_{i∉π} K_s,i*(f_i) over f ∈ ker C; the dual minimizes the
//! conjugate blocks over e ∈ im Cᵀ and reports the negated optimum.

use serde::Serialize;

use crate::convexfun::{Curvature, QuadraticForm};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::passivity::ResidualSeries;
use crate::relations::{compose, qualification_check, LinearRelation, MonotoneRelation, PortSpace};
use crate::simulate::{
    integrate_prox_euler, integrate_rk4, interconnect, interconnect_feedback, ExplicitConvexIph, InputSignal, IphSystem,
    Trajectory,
};
use crate::tol;

/// Stopping tolerance on the projected-gradient norm.
pub const SOLVER_TOL: f64 = 1e-9;
pub const SOLVER_MAX_ITER: usize = 1_000_000;
/// Residual above which a steady KKT solve counts as failed.
const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Qualification {
    Witness,
    Unchecked,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Nonincreasing,
    Violated,
    Skipped,
}

/// M_s over the input port together with the qualification verdict of the composition.
#[derive(Debug, Clone)]
pub struct SteadyRelation {
    pub relation: MonotoneRelation,
    pub qualification: Qualification,
}

/// {(y, u) : ∃ e_S, (0, e_S, y, u) ∈ M}, by composing M with {f_S = 0} through port `x`.
pub fn steady_relation(m: &MonotoneRelation) -> Result<SteadyRelation> {
    let (off, n) = m.space.range("x").ok_or_else(|| Error::PortMismatch("steady relation needs a state port `x`".into()))?;
    if off != 0 {
        return Err(Error::PortMismatch("state port `x` must come first".into()));
    }
    let space = PortSpace::single("x", n);
    let zero_flow = if m.as_linear().is_some() {
        MonotoneRelation::linear(space, LinearRelation::new(Mat::identity(n, n), Mat::zeros(n, n))?)?
    } else {
        MonotoneRelation::generator(space, QuadraticForm::zero(n))?
    };
    let qualification = match qualification_check(m, &zero_flow, "x") {
        Ok(Some(_)) => Qualification::Witness,
        Ok(None) => Qualification::Failed,
        Err(_) => Qualification::Unchecked,
    };
    Ok(SteadyRelation { relation: compose(m, &zero_flow, "x")?, qualification })
}

/// K_s(u) = K*(0, u), the conjugate taken in the first `n` coordinates.
pub fn steady_generating(k: &QuadraticForm, n: usize) -> Result<QuadraticForm> {
    if n > k.dim() {
        return Err(Error::DimensionMismatch { expected: k.dim(), got: n });
    }
    let coords: Vec<usize> = (0..n).collect();
    k.partial_conjugate(&coords)?.restrict(&coords, &Vector::zeros(n))
}

/// Steady effort and output of an explicit system at a constant input:
/// 0 = Jē − ∂ₑk(ē, ū) − Bū and ȳ = ∂ᵤk(ē, ū) + Bᵀē.
pub fn steady_point(sys: &ExplicitConvexIph, u: &Vector) -> Result<(Vector, Vector)> {
    let (n, m) = (sys.n(), sys.m());
    if u.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: u.len() });
    }
    if !sys.curves.is_empty() {
        return Err(Error::UnsupportedSystem("steady solve needs a system without scalar curves".into()));
    }
    let qf = sys.k.quadratic_form().ok_or_else(|| Error::UnsupportedSystem("steady solve needs a quadratic k".into()))?;
    let coords: Vec<usize> = (n..n + m).collect();
    let r = qf.restrict(&coords, u)?;
    let p = r.cons_a.nrows();
    let mut kkt = Mat::zeros(n + p, n + p);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(&r.q - &sys.j));
    kkt.view_mut((0, n), (n, p)).copy_from(&r.cons_a.transpose());
    kkt.view_mut((n, 0), (p, n)).copy_from(&r.cons_a);
    let rhs = linalg::vcat(&[&(-&r.a - &sys.b * u), &r.cons_b]);
    let (sol, residual) = linalg::lstsq(&kkt, &rhs);
    if residual > KKT_TOL * (1.0 + rhs.norm()) {
        return Err(Error::NoSolution { x: sol.rows(0, n).iter().copied().collect(), residual });
    }
    let e = sol.rows(0, n).into_owned();
    let mu = sol.rows(n, p).into_owned();
    let full = linalg::vcat(&[&e, u]);
    let g = qf.gradient(&full) + qf.cons_a.transpose() * mu;
    let y = g.rows(n, m).into_owned() + sys.b.transpose() * &e;
    Ok((e, y))
}

/// Simulates with constant ū until ‖ẋ‖ ≤ 1e−10 or t = 200 and returns (x̄, ȳ).
pub fn find_steady_pair(sys: &ExplicitConvexIph, ubar: &Vector, x0: &Vector) -> Result<(Vector, Vector)> {
    let dt = crate::simulate::DEFAULT_DT_RK4;
    let field = |x: &Vector, _t: f64| sys.vector_field(x, ubar);
    let mut x = x0.clone();
    let steps = (200.0 / dt).round() as usize;
    let mut speed = f64::INFINITY;
    for k in 0..steps {
        speed = field(&x, 0.0)?.norm();
        if speed <= 1e-10 {
            return Ok((x.clone(), sys.output(&x, ubar)?));
        }
        x = crate::simulate::rk4_step(&field, &x, k as f64 * dt, dt)?;
    }
    Err(Error::NonConvergence { residual: speed, iterations: steps })
}

/// Systems, flow-role set π and constraint matrix C with interconnection subspace ker C.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub systems: Vec<IphSystem>,
    pub pi_set: Vec<usize>,
    pub c: Mat,
}

impl NetworkSpec {
    pub fn new(systems: Vec<IphSystem>, pi_set: Vec<usize>, c: Mat) -> Result<Self> {
        if let Some(s) = systems.iter().find(|s| !s.is_explicit()) {
            return Err(Error::UnsupportedSystem(format!("system {} has no explicit model", s.name)));
        }
        let total: usize = systems.iter().map(|s| s.m()).sum();
        if c.ncols() != total {
            return Err(Error::DimensionMismatch { expected: total, got: c.ncols() });
        }
        let mut seen = vec![false; systems.len()];
        for &i in &pi_set {
            if i >= systems.len() || seen[i] {
                return Err(Error::InvalidArgument(format!("invalid index {i} in pi_set")));
            }
            seen[i] = true;
        }
        Ok(NetworkSpec { systems, pi_set, c })
    }

    /// Applies feedback wires first. A wired pair takes the place of its lower
    /// index; `pi_set` and the columns of `c` refer to the resulting list.
    pub fn wired(systems: Vec<IphSystem>, wiring: &[(usize, usize)], pi_set: Vec<usize>, c: Mat) -> Result<Self> {
        let k = systems.len();
        let mut partner: Vec<Option<usize>> = vec![None; k];
        let mut first: Vec<bool> = vec![false; k];
        for &(a, b) in wiring {
            if a >= k || b >= k || a == b || partner[a].is_some() || partner[b].is_some() {
                return Err(Error::InvalidArgument(format!("invalid wire ({a}, {b})")));
            }
            partner[a] = Some(b);
            partner[b] = Some(a);
            first[a] = true;
        }
        let mut out = Vec::new();
        for i in 0..k {
            match partner[i] {
                None => out.push(systems[i].clone()),
                Some(j) if i < j => {
                    let (a, b) = if first[i] { (i, j) } else { (j, i) };
                    out.push(interconnect_feedback(&systems[a], &systems[b])?);
                }
                Some(_) => {}
            }
        }
        Self::new(out, pi_set, c)
    }

    /// (offset, dim) of each system's block among the stacked port variables.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.systems
            .iter()
            .map(|s| {
                let b = (off, s.m());
                off += s.m();
                b
            })
            .collect()
    }

    fn explicit(&self, i: usize) -> &ExplicitConvexIph {
        self.systems[i].explicit.as_ref().expect("checked in NetworkSpec::new")
    }

    fn in_pi(&self, i: usize) -> bool {
        self.pi_set.contains(&i)
    }

    /// True when every f ∈ ker C vanishes on block i.
    fn pinned(&self, i: usize) -> bool {
        let (off, d) = self.blocks()[i];
        let nb = linalg::null_space(&self.c);
        d == 0 || nb.rows(off, d).amax() <= tol::DOMAIN
    }

    /// The whole network as one explicit closed system, when every open
    /// input is held at zero by the interconnection.
    pub fn closed_loop(&self) -> Result<Option<ExplicitConvexIph>> {
        let mut parts = Vec::with_capacity(self.systems.len());
        for (i, s) in self.systems.iter().enumerate() {
            if s.m() == 0 {
                parts.push(s.clone());
            } else if self.in_pi(i) && self.pinned(i) {
                parts.push(s.terminate()?);
            } else {
                return Ok(None);
            }
        }
        let closed = interconnect(&parts, &[])?;
        Ok(closed.explicit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub objective: f64,
    pub f_bar: Vec<Vec<f64>>,
    pub e_bar: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub x_bar: Vec<Option<Vec<f64>>>,
    pub kkt_residual: f64,
    pub dual_residual: f64,
    pub stability: Stability,
    pub qualification: Qualification,
    /// Systems whose state could not be recovered, with the reason.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub recovery_failures: Vec<(usize, String)>,
}

impl EquilibriumReport {
    /// Stacked state when every system's x̄ was recovered.
    pub fn state(&self) -> Option<Vector> {
        let parts: Option<Vec<&Vec<f64>>> = self.x_bar.iter().map(|x| x.as_ref()).collect();
        Some(Vector::from_iterator(parts.as_ref()?.iter().map(|p| p.len()).sum(), parts?.into_iter().flatten().copied()))
    }
}

/// Per-system contribution to the network program.
enum Block {
    /// Steady generating function over u.
    Steady(QuadraticForm),
    /// Input pinned to zero by C; carries w at ū = 0.
    Pinned(Vector),
}

fn build_blocks(spec: &NetworkSpec) -> Result<Vec<Block>> {
    (0..spec.systems.len())
        .map(|i| {
            let ex = spec.explicit(i);
            match ex.generator() {
                Some(l) => {
                    let n = ex.n();
                    let el = l.eliminate(&(0..n).collect::<Vec<_>>())?;
                    if el.curvature != Curvature::PositiveSemidefinite {
                        return Err(Error::UnsupportedSystem(format!("system {i}: k is not convex in the efforts")));
                    }
                    if el.form.affine_param().is_err() {
                        let d = &el.flat * &el.range_b;
                        let nrm = d.norm();
                        let d = if nrm > 0.0 { d / nrm } else { d };
                        return Err(Error::UnboundedObjective { direction: d.iter().copied().collect() });
                    }
                    Ok(Block::Steady(steady_generating(&l, n)?))
                }
                None => {
                    if !(spec.in_pi(i) && spec.pinned(i)) {
                        return Err(Error::UnsupportedSystem(format!(
                            "system {i} has no steady generating function; its input must be in pi_set and pinned to zero by C"
                        )));
                    }
                    let (_, y) = steady_point(ex, &Vector::zeros(ex.m()))
                        .map_err(|e| Error::StateRecoveryFailed { system: i, reason: e.to_string() })?;
                    Ok(Block::Pinned(-y))
                }
            }
        })
        .collect()
}

fn full_conjugate(k: &QuadraticForm) -> Result<QuadraticForm> {
    let all: Vec<usize> = (0..k.dim()).collect();
    k.partial_conjugate(&all)
}

struct Minimizer {
    x: Vector,
    grad: Vector,
    value: f64,
    proj_grad: f64,
}

/// Minimizes a quadratic form over its affine constraint set by projected
/// gradient descent with step 1/L, after an exact recession check.
fn minimize(f: &QuadraticForm) -> Result<Minimizer> {
    let (x0, nb) = f.affine_param()?;
    let qr = linalg::sym(&(nb.transpose() * &f.q * &nb));
    let g0 = nb.transpose() * (&f.q * &x0 + &f.a);
    let scale = linalg::max_abs(&f.q).max(1.0);
    let (vals, vecs) = linalg::sym_eigen(&qr);
    let unbounded = |d: Vector| {
        let nrm = d.norm();
        Error::UnboundedObjective { direction: (d / nrm).iter().copied().collect() }
    };
    if !vals.is_empty() && vals[0] < -tol::PSD * scale {
        let v = vecs.column(0).into_owned();
        let v = if g0.dot(&v) > 0.0 { -v } else { v };
        return Err(unbounded(&nb * v));
    }
    let flat: Vec<usize> = (0..vals.len()).filter(|&i| vals[i].abs() <= tol::PSD * scale).collect();
    let mut kf = Mat::zeros(qr.nrows(), flat.len());
    for (c, &i) in flat.iter().enumerate() {
        kf.set_column(c, &vecs.column(i));
    }
    let slope = kf.transpose() * &g0;
    if slope.norm() > SOLVER_TOL * g0.norm().max(1.0) {
        return Err(unbounded(-(&nb * (&kf * slope))));
    }
    let lip = vals.iter().copied().fold(0.0_f64, f64::max);
    let mut z = Vector::zeros(qr.nrows());
    let mut g = &qr * &z + &g0;
    let mut iterations = 0;
    while g.norm() > SOLVER_TOL {
        if iterations >= SOLVER_MAX_ITER {
            return Err(Error::MaxIterations { residual: g.norm() });
        }
        z -= &g / lip;
        g = &qr * &z + &g0;
        iterations += 1;
    }
    let x = x0 + &nb * z;
    let grad = &f.q * &x + &f.a;
    Ok(Minimizer { value: f.value_unconstrained(&x), grad, x, proj_grad: g.norm() })
}

fn split(v: &Vector, blocks: &[(usize, usize)]) -> Vec<Vec<f64>> {
    blocks.iter().map(|&(o, d)| v.rows(o, d).iter().copied().collect()).collect()
}

/// Assembles the report from the network-level pair (f̄, ē).
fn finish(spec: &NetworkSpec, objective: f64, f: &Vector, e: &Vector, kkt_parts: &[f64], pinned: bool) -> EquilibriumReport {
    let blocks = spec.blocks();
    let ct = spec.c.transpose();
    let lambda = linalg::pinv(&ct) * e;
    let dual_residual = (e - &ct * &lambda).norm();
    let kkt_residual = kkt_parts.iter().copied().fold(dual_residual.max((&spec.c * f).norm()), f64::max);
    let mut x_bar = Vec::with_capacity(blocks.len());
    let mut recovery_failures = Vec::new();
    for (i, &(o, d)) in blocks.iter().enumerate() {
        let u = if spec.in_pi(i) { f.rows(o, d) } else { e.rows(o, d) }.into_owned();
        let ex = spec.explicit(i);
        match steady_point(ex, &u).and_then(|(es, _)| ex.h.grad_inverse(&es)) {
            Ok(x) => x_bar.push(Some(x.iter().copied().collect())),
            Err(err) => {
                x_bar.push(None);
                recovery_failures.push((i, err.to_string()));
            }
        }
    }
    let mut report = EquilibriumReport {
        objective,
        f_bar: split(f, &blocks),
        e_bar: split(e, &blocks),
        lambda: lambda.iter().copied().collect(),
        x_bar,
        kkt_residual,
        dual_residual,
        stability: Stability::Skipped,
        qualification: if pinned { Qualification::Unchecked } else { Qualification::Witness },
        recovery_failures,
    };
    report.stability = stability_check(spec, &report).unwrap_or(Stability::Skipped);
    report
}

/// Minimizes Σ_{i∈π} K_s,i(f_i) + Σ_{i∉π} K_s,i*(f_i) over f ∈ ker C.
pub fn solve_network_equilibrium(spec: &NetworkSpec) -> Result<EquilibriumReport> {
    let blocks = build_blocks(spec)?;
    let mut forms = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        forms.push(match b {
            Block::Steady(k) if spec.in_pi(i) => k.clone(),
            Block::Steady(k) => full_conjugate(k)?,
            Block::Pinned(w) => QuadraticForm::zero(w.len()),
        });
    }
    let blockwise = QuadraticForm::block_diag(&forms);
    let a_b = blockwise.cons_a.clone();
    let b_b = blockwise.cons_b.clone();
    let total = blockwise.dim();
    let f = blockwise.with_constraint(&spec.c, &Vector::zeros(spec.c.nrows()));
    let sol = minimize(&f)?;
    let mut grad = sol.grad.clone();
    let pinned = blocks.iter().any(|b| matches!(b, Block::Pinned(_)));
    for (i, &(o, d)) in spec.blocks().iter().enumerate() {
        if let Block::Pinned(w) = &blocks[i] {
            grad.rows_mut(o, d).copy_from(w);
        }
    }
    // ē = ∇F + A_bᵀμ with μ chosen so that ē lies in im Cᵀ as closely as possible.
    let ct = spec.c.transpose();
    let sys = linalg::hstack(&[&ct, &(-a_b.transpose())]);
    let (sol_mu, _) = linalg::lstsq(&sys, &grad);
    let mu = sol_mu.rows(ct.ncols(), a_b.nrows()).into_owned();
    let e = grad + a_b.transpose() * mu;
    debug_assert_eq!(e.len(), total);
    let feas = (&a_b * &sol.x - b_b).norm();
    Ok(finish(spec, sol.value, &sol.x, &e, &[sol.proj_grad, feas], pinned))
}

/// Minimizes the conjugate program over e ∈ im Cᵀ and reports the negated optimum.
pub fn solve_dual(spec: &NetworkSpec) -> Result<EquilibriumReport> {
    let blocks = build_blocks(spec)?;
    let mut forms = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        forms.push(match b {
            Block::Steady(k) if spec.in_pi(i) => full_conjugate(k)?,
            Block::Steady(k) => k.clone(),
            Block::Pinned(_) => {
                return Err(Error::UnsupportedSystem(format!("system {i}: the dual program needs steady generating functions")))
            }
        });
    }
    let blockwise = QuadraticForm::block_diag(&forms);
    let a_b = blockwise.cons_a.clone();
    let b_b = blockwise.cons_b.clone();
    let d = linalg::null_space(&spec.c).transpose();
    let g = blockwise.with_constraint(&d, &Vector::zeros(d.nrows()));
    let sol = minimize(&g)?;
    // f̄ = ∇G + A_bᵀμ with C f̄ = 0.
    let cab = &spec.c * a_b.transpose();
    let (mu, _) = linalg::lstsq(&cab, &(-(&spec.c * &sol.grad)));
    let f = &sol.grad + a_b.transpose() * mu;
    let feas = (&a_b * &sol.x - b_b).norm();
    Ok(finish(spec, -sol.value, &f, &sol.x, &[sol.proj_grad, feas], false))
}

/// Simulates the closed network from a perturbation of x̄ and checks that
/// the Bregman distance to x̄ never increases.
fn stability_check(spec: &NetworkSpec, report: &EquilibriumReport) -> Result<Stability> {
    let Some(sys) = spec.closed_loop()? else {
        return Ok(Stability::Skipped);
    };
    let Some(xbar) = report.state() else {
        return Ok(Stability::Skipped);
    };
    let n = xbar.len();
    let x0 = &xbar + Vector::from_iterator(n, (0..n).map(|i| if i % 2 == 0 { 0.1 } else { -0.1 }));
    let u = InputSignal::zero(0);
    let traj = if sys.is_smooth() {
        integrate_rk4(&sys, &x0, &u, 10.0, 1e-3)?
    } else {
        integrate_prox_euler(&sys, &x0, &u, 10.0, 1e-3)?
    };
    let b: Vec<f64> = traj.states.iter().map(|x| sys.h.bregman(x, &xbar)).collect::<Result<_>>()?;
    let slack = 1e-9 * (1.0 + b[0]);
    Ok(if b.windows(2).all(|w| w[1] <= w[0] + slack) { Stability::Nonincreasing } else { Stability::Violated })
}

/// Residuals of d/dt H_x̄ ≤ (u − ū)ᵀ(y − ȳ) along `traj`, with H_x̄ the
/// Bregman distance to x̄ and y the passive output.
pub fn check_equilibrium_independent_passivity(
    sys: &ExplicitConvexIph,
    ubar: &Vector,
    xbar: &Vector,
    traj: &Trajectory,
) -> Result<ResidualSeries> {
    if traj.len() < 2 {
        return Err(Error::InvalidArgument("trajectory needs at least two points".into()));
    }
    let ybar = sys.passive_output(xbar, ubar)?;
    let storage: Vec<f64> = traj.states.iter().map(|x| sys.h.bregman(x, xbar)).collect::<Result<_>>()?;
    let mut residuals = Vec::with_capacity(traj.len() - 1);
    for k in 0..traj.len() - 1 {
        let h = traj.times[k + 1] - traj.times[k];
        let y = sys.passive_output(&traj.states[k], &traj.inputs[k])?;
        residuals.push((storage[k + 1] - storage[k]) / h - (&traj.inputs[k] - ubar).dot(&(y - &ybar)));
    }
    Ok(ResidualSeries { dt: traj.times[1] - traj.times[0], residuals })
}
