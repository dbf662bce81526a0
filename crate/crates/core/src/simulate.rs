//! Time integration of explicit and set-valued incrementally port-Hamiltonian dynamics.

use std::fmt::Write as _;

use crate::convexfun::{ConvexFunction, QuadraticForm};
use crate::error::{Error, Result};
use crate::hamiltonian::Hamiltonian;
use crate::linalg::{self, Mat, Vector};
use crate::relations::{Field, MonotoneRelation, Port, PortSpace, ScalarCurve};
use crate::tol;

/// State norm beyond which an integration is declared unstable.
pub const STATE_BOUND: f64 = 1e12;
pub const DEFAULT_DT_PROX: f64 = 1e-3;
pub const DEFAULT_DT_RK4: f64 = 1e-2;

/// ẋ = J∇H(x) − ∂ₑk(∇H(x), u) − c(∇H(x)) − Bu with output y = ∂ᵤk + Bᵀ∇H(x).
///
/// The passive output paired with u in the monotone relation is
/// y_p = ∂ᵤk − Bᵀ∇H(x); it coincides with y when B = 0.
#[derive(Debug, Clone)]
pub struct ExplicitConvexIph {
    /// Convex function of (e, u).
    pub k: ConvexFunction,
    pub h: Hamiltonian,
    pub j: Mat,
    pub b: Mat,
    /// Scalar characteristics added to the flow, (coordinate, curve).
    pub curves: Vec<(usize, ScalarCurve)>,
}

impl ExplicitConvexIph {
    pub fn new(k: ConvexFunction, h: Hamiltonian, j: Option<Mat>, b: Option<Mat>) -> Result<Self> {
        let n = h.dim();
        if k.dim() < n {
            return Err(Error::DimensionMismatch { expected: n, got: k.dim() });
        }
        let m = k.dim() - n;
        let j = j.unwrap_or_else(|| Mat::zeros(n, n));
        if j.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, got: j.nrows() });
        }
        if linalg::max_abs(&(&j + j.transpose())) > tol::SKEW {
            return Err(Error::InvalidArgument("J must be skew-symmetric".into()));
        }
        let b = b.unwrap_or_else(|| Mat::zeros(n, m));
        if b.shape() != (n, m) {
            return Err(Error::InvalidArgument(format!("B must be {n}×{m}, got {}×{}", b.nrows(), b.ncols())));
        }
        Ok(ExplicitConvexIph { k, h, j, b, curves: vec![] })
    }

    pub fn with_curves(mut self, curves: Vec<(usize, ScalarCurve)>) -> Result<Self> {
        if curves.iter().any(|(i, _)| *i >= self.n()) {
            return Err(Error::InvalidArgument("curve coordinate out of range".into()));
        }
        self.curves = curves;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.h.dim()
    }

    pub fn m(&self) -> usize {
        self.k.dim() - self.n()
    }

    pub fn is_smooth(&self) -> bool {
        self.k.is_smooth()
    }

    /// True when k provably ignores the input.
    pub fn k_ignores_input(&self) -> bool {
        let n = self.n();
        let coords: Vec<usize> = (n..n + self.m()).collect();
        !self.k.depends_on(&coords)
    }

    fn gradient_parts(&self, e: &Vector, u: &Vector) -> Result<(Vector, Vector)> {
        let n = self.n();
        let g = self
            .k
            .subgrad(&linalg::vcat(&[e, u]))?
            .ok_or_else(|| Error::NonSmoothVectorField("state left the domain of k".into()))?;
        Ok((g.rows(0, n).into_owned(), g.rows(n, self.m()).into_owned()))
    }

    fn curve_term(&self, e: &Vector) -> Vector {
        let mut c = Vector::zeros(e.len());
        for (i, cv) in &self.curves {
            c[*i] += cv.eval(e[*i]);
        }
        c
    }

    fn check_u(&self, u: &Vector) -> Result<()> {
        if u.len() == self.m() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.m(), got: u.len() })
        }
    }

    pub fn vector_field(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_u(u)?;
        let e = self.h.grad(x)?;
        let (ge, _) = self.gradient_parts(&e, u)?;
        Ok(&self.j * &e - ge - self.curve_term(&e) - &self.b * u)
    }

    /// y = ∂ᵤk + Bᵀe.
    pub fn output(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_u(u)?;
        let e = self.h.grad(x)?;
        let (_, gu) = self.gradient_parts(&e, u)?;
        Ok(gu + self.b.transpose() * e)
    }

    /// y_p = ∂ᵤk − Bᵀe.
    pub fn passive_output(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_u(u)?;
        let e = self.h.grad(x)?;
        let (_, gu) = self.gradient_parts(&e, u)?;
        Ok(gu - self.b.transpose() * e)
    }

    /// Dissipated power ⟨(e, u), ∇k⟩ + ⟨e, c(e)⟩ at a point.
    pub fn dissipation(&self, x: &Vector, u: &Vector) -> Result<f64> {
        let e = self.h.grad(x)?;
        let (ge, gu) = self.gradient_parts(&e, u)?;
        Ok(e.dot(&ge) + u.dot(&gu) + e.dot(&self.curve_term(&e)))
    }

    /// Jacobians of (ẋ, y_p) with respect to (x, u) along a smooth trajectory.
    pub fn jacobians(&self, x: &Vector, u: &Vector) -> Result<(Mat, Mat, Mat, Mat)> {
        let n = self.n();
        let m = self.m();
        let e = self.h.grad(x)?;
        let hh = self.h.hessian(x)?;
        let kk = self
            .k
            .hessian(&linalg::vcat(&[&e, u]))?
            .ok_or_else(|| Error::NonSmoothVectorField("k has nonsmooth terms".into()))?;
        let kee = kk.view((0, 0), (n, n)).into_owned();
        let keu = kk.view((0, n), (n, m)).into_owned();
        let kue = kk.view((n, 0), (m, n)).into_owned();
        let kuu = kk.view((n, n), (m, m)).into_owned();
        let mut dc = Mat::zeros(n, n);
        for (i, cv) in &self.curves {
            dc[(*i, *i)] += cv.derivative(e[*i]);
        }
        let a = (&self.j - kee - dc) * &hh;
        let bu = -keu - &self.b;
        let c = (kue - self.b.transpose()) * &hh;
        Ok((a, bu, c, kuu))
    }

    /// Port space with the state port `x` and, when m > 0, the input port `p`.
    pub fn ports(&self) -> PortSpace {
        port_space(self.n(), self.m())
    }

    /// {(f_x, y_p; e, u)} with f_x = −ẋ, as a field relation.
    pub fn relation(&self) -> Result<MonotoneRelation> {
        let n = self.n();
        let m = self.m();
        let mut s = Mat::zeros(n + m, n + m);
        s.view_mut((0, 0), (n, n)).copy_from(&(-&self.j));
        s.view_mut((0, n), (n, m)).copy_from(&self.b);
        s.view_mut((n, 0), (m, n)).copy_from(&(-self.b.transpose()));
        let phi = if matches!(self.k.node(), crate::convexfun::Node::Zero(_)) { None } else { Some(self.k.clone()) };
        MonotoneRelation::field(self.ports(), Field::new(phi, s, self.curves.clone())?)
    }

    /// k(e, u) + eᵀBu as a quadratic form when k has one and there is no J or curve.
    pub fn generator(&self) -> Option<QuadraticForm> {
        if !linalg::is_zero(&self.j) || !self.curves.is_empty() {
            return None;
        }
        let mut qf = self.k.quadratic_form()?;
        let n = self.n();
        let m = self.m();
        for i in 0..n {
            for c in 0..m {
                qf.q[(i, n + c)] += self.b[(i, c)];
                qf.q[(n + c, i)] += self.b[(i, c)];
            }
        }
        Some(qf)
    }

    /// System with the input held at zero.
    pub fn terminate(&self) -> Result<ExplicitConvexIph> {
        let k = self.k.fix_trailing(&Vector::zeros(self.m()))?;
        let mut out = ExplicitConvexIph::new(k, self.h.clone(), Some(self.j.clone()), None)?;
        out.curves = self.curves.clone();
        Ok(out)
    }
}

fn port_space(n: usize, m: usize) -> PortSpace {
    let mut ports = vec![Port::new("x", n)];
    if m > 0 {
        ports.push(Port::new("p", m));
    }
    PortSpace::new(ports).expect("distinct port names")
}

/// An incrementally port-Hamiltonian system: (−ẋ, y, ∇H(x), u) ∈ M.
#[derive(Debug, Clone)]
pub struct IphSystem {
    pub name: String,
    pub relation: MonotoneRelation,
    pub h: Hamiltonian,
    /// Explicit model when the relation determines (ẋ, y) from (e, u).
    pub explicit: Option<ExplicitConvexIph>,
}

impl IphSystem {
    pub fn new(name: impl Into<String>, relation: MonotoneRelation, h: Hamiltonian) -> Result<Self> {
        let n = h.dim();
        match relation.space.range("x") {
            Some((0, d)) if d == n => {}
            _ => return Err(Error::PortMismatch(format!("relation needs a leading state port `x` of dimension {n}"))),
        }
        Ok(IphSystem { name: name.into(), relation, h, explicit: None })
    }

    pub fn from_explicit(name: impl Into<String>, sys: ExplicitConvexIph) -> Result<Self> {
        Ok(IphSystem { name: name.into(), relation: sys.relation()?, h: sys.h.clone(), explicit: Some(sys) })
    }

    pub fn n(&self) -> usize {
        self.h.dim()
    }

    pub fn m(&self) -> usize {
        self.relation.dim() - self.n()
    }

    pub fn is_explicit(&self) -> bool {
        self.explicit.is_some()
    }

    /// Input held at zero; the port is removed.
    pub fn terminate(&self) -> Result<IphSystem> {
        let ex = self.explicit.as_ref().ok_or_else(|| Error::UnsupportedSystem("termination needs an explicit model".into()))?;
        IphSystem::from_explicit(self.name.clone(), ex.terminate()?)
    }
}

/// Closes u₁ = y₂, u₂ = y₁ between two explicit systems.
///
/// Both k₁ and k₂ must ignore their inputs, so that the loop has no
/// algebraic part. The closed loop is explicit with
/// k = k₁ + k₂ + e₁ᵀB₁B₂ᵀe₂, which must be convex.
pub fn interconnect_feedback(a: &IphSystem, b: &IphSystem) -> Result<IphSystem> {
    let (ea, eb) = match (&a.explicit, &b.explicit) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::UnsupportedSystem("feedback interconnection needs explicit models".into())),
    };
    if ea.m() != eb.m() {
        return Err(Error::PortMismatch(format!("input dimensions {} and {} differ", ea.m(), eb.m())));
    }
    if !ea.k_ignores_input() || !eb.k_ignores_input() {
        return Err(Error::UnsupportedSystem("k depends on the input, the loop is algebraic".into()));
    }
    let (na, nb) = (ea.n(), eb.n());
    let ka = ea.k.fix_trailing(&Vector::zeros(ea.m()))?;
    let kb = eb.k.fix_trailing(&Vector::zeros(eb.m()))?;
    let cross = &ea.b * eb.b.transpose();
    let k = if linalg::is_zero(&cross) {
        ConvexFunction::separable_sum(vec![ka, kb])?
    } else {
        let (qa, qb) = match (ka.quadratic_form(), kb.quadratic_form()) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::UnsupportedSystem("coupling term needs quadratic k".into())),
        };
        let mut qf = QuadraticForm::block_diag(&[qa, qb]);
        for i in 0..na {
            for j in 0..nb {
                qf.q[(i, na + j)] += cross[(i, j)];
                qf.q[(na + j, i)] += cross[(i, j)];
            }
        }
        qf.to_convex()?
    };
    let h = stack_hamiltonians(&ea.h, &eb.h)?;
    let j = linalg::block_diag(&[&ea.j, &eb.j]);
    let mut sys = ExplicitConvexIph::new(k, h, Some(j), None)?;
    let mut curves = ea.curves.clone();
    curves.extend(eb.curves.iter().map(|(i, c)| (i + na, c.clone())));
    sys = sys.with_curves(curves)?;
    IphSystem::from_explicit(format!("{}+{}", a.name, b.name), sys)
}

/// Interconnects a list of systems pairwise along the given feedback wires.
pub fn interconnect(systems: &[IphSystem], wiring: &[(usize, usize)]) -> Result<IphSystem> {
    let mut used = vec![false; systems.len()];
    let mut parts = Vec::new();
    for &(i, j) in wiring {
        if i >= systems.len() || j >= systems.len() || i == j || used[i] || used[j] {
            return Err(Error::InvalidArgument(format!("invalid wire ({i}, {j})")));
        }
        used[i] = true;
        used[j] = true;
        parts.push(interconnect_feedback(&systems[i], &systems[j])?);
    }
    for (i, s) in systems.iter().enumerate() {
        if !used[i] {
            parts.push(s.clone());
        }
    }
    let mut it = parts.into_iter();
    let first = it.next().ok_or_else(|| Error::InvalidArgument("no systems".into()))?;
    it.try_fold(first, |acc, s| stack(&acc, &s))
}

/// Uncoupled parallel stack of two explicit systems.
fn stack(a: &IphSystem, b: &IphSystem) -> Result<IphSystem> {
    let (ea, eb) = match (&a.explicit, &b.explicit) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::UnsupportedSystem("stacking needs explicit models".into())),
    };
    let (na, nb, ma, mb) = (ea.n(), eb.n(), ea.m(), eb.m());
    let n = na + nb;
    let m = ma + mb;
    let mut perm = Mat::zeros(n + m, n + m);
    for i in 0..na {
        perm[(i, i)] = 1.0;
    }
    for i in 0..ma {
        perm[(na + i, n + i)] = 1.0;
    }
    for i in 0..nb {
        perm[(na + ma + i, na + i)] = 1.0;
    }
    for i in 0..mb {
        perm[(na + ma + nb + i, n + ma + i)] = 1.0;
    }
    let k = ConvexFunction::affine_precompose(
        ConvexFunction::separable_sum(vec![ea.k.clone(), eb.k.clone()])?,
        perm,
        Vector::zeros(n + m),
    )?;
    let h = stack_hamiltonians(&ea.h, &eb.h)?;
    let j = linalg::block_diag(&[&ea.j, &eb.j]);
    let bm = linalg::block_diag(&[&ea.b, &eb.b]);
    let mut curves = ea.curves.clone();
    curves.extend(eb.curves.iter().map(|(i, c)| (i + na, c.clone())));
    let sys = ExplicitConvexIph::new(k, h, Some(j), Some(bm))?.with_curves(curves)?;
    IphSystem::from_explicit(format!("{}|{}", a.name, b.name), sys)
}

fn stack_hamiltonians(a: &Hamiltonian, b: &Hamiltonian) -> Result<Hamiltonian> {
    match (a, b) {
        (Hamiltonian::Quadratic { q: qa, a: aa, c: ca }, Hamiltonian::Quadratic { q: qb, a: ab, c: cb }) => {
            Hamiltonian::quadratic(linalg::block_diag(&[qa, qb]), linalg::vcat(&[aa, ab]), ca + cb)
        }
        (Hamiltonian::Separable(pa), Hamiltonian::Separable(pb)) => {
            Hamiltonian::separable(pa.iter().chain(pb.iter()).copied().collect())
        }
        _ => Err(Error::UnsupportedSystem("cannot stack quadratic and separable Hamiltonians".into())),
    }
}

/// Input signal u(t).
#[derive(Debug, Clone, PartialEq)]
pub enum InputSignal {
    Constant(Vector),
    /// Value `values[k]` on [breaks[k-1], breaks[k]).
    PiecewiseConstant {
        breaks: Vec<f64>,
        values: Vec<Vector>,
    },
    /// Linear interpolation, held constant outside the sample range.
    Sampled {
        times: Vec<f64>,
        values: Vec<Vector>,
    },
}

impl InputSignal {
    pub fn zero(m: usize) -> Self {
        InputSignal::Constant(Vector::zeros(m))
    }

    pub fn validate(&self) -> Result<()> {
        let (ts, vals, expect) = match self {
            InputSignal::Constant(_) => return Ok(()),
            InputSignal::PiecewiseConstant { breaks, values } => (breaks, values, breaks.len() + 1),
            InputSignal::Sampled { times, values } => (times, values, times.len()),
        };
        if vals.len() != expect || vals.is_empty() {
            return Err(Error::InvalidArgument(format!("input signal needs {expect} values, got {}", vals.len())));
        }
        if ts.windows(2).any(|w| w[0] >= w[1]) || ts.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("input breakpoints must be finite and increasing".into()));
        }
        let m = vals[0].len();
        if vals.iter().any(|v| v.len() != m) {
            return Err(Error::InvalidArgument("input values differ in dimension".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            InputSignal::Constant(v) => v.len(),
            InputSignal::PiecewiseConstant { values, .. } | InputSignal::Sampled { values, .. } => values[0].len(),
        }
    }

    pub fn at(&self, t: f64) -> Vector {
        match self {
            InputSignal::Constant(v) => v.clone(),
            InputSignal::PiecewiseConstant { breaks, values } => values[breaks.partition_point(|&b| t >= b)].clone(),
            InputSignal::Sampled { times, values } => {
                let k = times.partition_point(|&s| t >= s);
                if k == 0 {
                    values[0].clone()
                } else if k == times.len() {
                    values[k - 1].clone()
                } else {
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    &values[k - 1] * (1.0 - w) + &values[k] * w
                }
            }
        }
    }
}

/// Solver diagnostics of one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepDiagnostics {
    pub inner_iterations: usize,
    pub residual: f64,
    /// Subgradient of k(·, u_k) selected by the implicit step.
    pub selection: Option<Vector>,
    /// Coordinates whose selection lies strictly inside a nontrivial subdifferential interval.
    pub stuck: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub outputs: Vec<Vector>,
    /// One entry per step; `diagnostics[k]` describes the step from k to k + 1.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn terminal_state(&self) -> &Vector {
        self.states.last().expect("trajectory has the initial point")
    }

    pub fn same_grid(&self, other: &Trajectory) -> bool {
        self.times.len() == other.times.len() && self.times.iter().zip(&other.times).all(|(a, b)| a == b)
    }

    /// CSV with header `t,x[0],…,u[0],…,y[0],…` and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |v| v.len());
        let m = self.inputs.first().map_or(0, |v| v.len());
        let p = self.outputs.first().map_or(0, |v| v.len());
        let mut out = String::from("t");
        for (name, d) in [("x", n), ("u", m), ("y", p)] {
            for i in 0..d {
                let _ = write!(out, ",{name}[{i}]");
            }
        }
        out.push('\n');
        for k in 0..self.len() {
            let _ = write!(out, "{:.16e}", self.times[k]);
            for v in [&self.states[k], &self.inputs[k], &self.outputs[k]] {
                for x in v.iter() {
                    let _ = write!(out, ",{x:.16e}");
                }
            }
            out.push('\n');
        }
        out
    }
}

fn time_grid(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("t_end must be positive, got {t_end}")));
    }
    let steps = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let mut ts: Vec<f64> = (0..steps).map(|k| k as f64 * dt).collect();
    ts.push(t_end);
    Ok(ts)
}

fn check_state(x: &Vector, step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) && x.norm() <= STATE_BOUND {
        Ok(())
    } else {
        Err(Error::StepUnstable { step })
    }
}

fn check_setup(sys: &ExplicitConvexIph, x0: &Vector, u: &InputSignal) -> Result<()> {
    if x0.len() != sys.n() {
        return Err(Error::DimensionMismatch { expected: sys.n(), got: x0.len() });
    }
    u.validate()?;
    if u.dim() != sys.m() {
        return Err(Error::DimensionMismatch { expected: sys.m(), got: u.dim() });
    }
    Ok(())
}

/// Classical fourth-order Runge–Kutta on a smooth explicit system.
pub fn integrate_rk4(sys: &ExplicitConvexIph, x0: &Vector, u: &InputSignal, t_end: f64, dt: f64) -> Result<Trajectory> {
    check_setup(sys, x0, u)?;
    if !sys.is_smooth() {
        return Err(Error::NonSmoothVectorField("k has ℓ1 or indicator terms; use the proximal integrator".into()));
    }
    let times = time_grid(t_end, dt)?;
    let mut states = Vec::with_capacity(times.len());
    let mut inputs = Vec::with_capacity(times.len());
    let mut outputs = Vec::with_capacity(times.len());
    let mut x = x0.clone();
    for (k, &t) in times.iter().enumerate() {
        let uk = u.at(t);
        outputs.push(sys.output(&x, &uk)?);
        inputs.push(uk);
        states.push(x.clone());
        if k + 1 == times.len() {
            break;
        }
        let h = times[k + 1] - t;
        x = rk4_step(&|x: &Vector, t: f64| sys.vector_field(x, &u.at(t)), &x, t, h)?;
        check_state(&x, k + 1)?;
    }
    let steps = times.len() - 1;
    Ok(Trajectory { times, states, inputs, outputs, diagnostics: vec![StepDiagnostics::default(); steps] })
}

pub(crate) fn rk4_step<F>(f: &F, x: &Vector, t: f64, h: f64) -> Result<Vector>
where
    F: Fn(&Vector, f64) -> Result<Vector>,
{
    let k1 = f(x, t)?;
    let k2 = f(&(x + &k1 * (0.5 * h)), t + 0.5 * h)?;
    let k3 = f(&(x + &k2 * (0.5 * h)), t + 0.5 * h)?;
    let k4 = f(&(x + &k3 * h), t + h)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Square root D of Q ≻ 0 with Q = D²; exact on diagonal matrices.
fn sqrt_spd(q: &Mat) -> Result<(Mat, Mat)> {
    if linalg::is_diagonal(q) {
        let d = q.diagonal();
        if d.iter().any(|&v| v <= tol::PSD) {
            return Err(Error::UnsupportedSystem("proximal integration needs Q ≻ 0".into()));
        }
        let s = d.map(f64::sqrt);
        return Ok((Mat::from_diagonal(&s), Mat::from_diagonal(&s.map(|v| 1.0 / v))));
    }
    let (vals, vecs) = linalg::sym_eigen(q);
    if vals.iter().any(|&v| v <= tol::PSD) {
        return Err(Error::UnsupportedSystem("proximal integration needs Q ≻ 0".into()));
    }
    let s = Mat::from_diagonal(&vals.map(f64::sqrt));
    let si = Mat::from_diagonal(&vals.map(|v| 1.0 / v.sqrt()));
    Ok((&vecs * s * vecs.transpose(), &vecs * si * vecs.transpose()))
}

/// Backward Euler in the relation: each step solves
/// x⁺ ∈ x + dt(J e⁺ − ∂ₑk(e⁺, u_k) − B u_k), e⁺ = Q x⁺ + a,
/// by one prox when J = 0 and by a proximal fixed-point iteration otherwise.
pub fn integrate_prox_euler(sys: &ExplicitConvexIph, x0: &Vector, u: &InputSignal, t_end: f64, dt: f64) -> Result<Trajectory> {
    check_setup(sys, x0, u)?;
    let (q, a) = match &sys.h {
        Hamiltonian::Quadratic { q, a, .. } => (q.clone(), a.clone()),
        Hamiltonian::Separable(_) => {
            return Err(Error::UnsupportedSystem("proximal integration needs a quadratic-affine H".into()))
        }
    };
    if !sys.curves.is_empty() {
        return Err(Error::UnsupportedSystem("systems with scalar curves integrate with RK4 only".into()));
    }
    let (d, d_inv) = sqrt_spd(&q)?;
    let diag = linalg::is_diagonal(&q);
    let chol = if diag {
        None
    } else {
        Some(q.clone().cholesky().ok_or_else(|| Error::UnsupportedSystem("Q is not positive definite".into()))?)
    };
    let skew = !linalg::is_zero(&sys.j);
    let times = time_grid(t_end, dt)?;
    let mut states = Vec::with_capacity(times.len());
    let mut inputs = Vec::with_capacity(times.len());
    let mut outputs = Vec::with_capacity(times.len());
    let mut diagnostics = Vec::with_capacity(times.len());
    let mut x = x0.clone();
    let mut e = sys.h.grad(&x)?;
    for (k, &t) in times.iter().enumerate() {
        let uk = u.at(t);
        outputs.push(implicit_output(sys, &e, &uk));
        inputs.push(uk.clone());
        states.push(x.clone());
        if k + 1 == times.len() {
            break;
        }
        let h = times[k + 1] - t;
        let p = sys.k.fix_trailing(&uk)?;
        let scaled = ConvexFunction::affine_precompose(p.clone(), d.clone(), Vector::zeros(sys.n()))?;
        let w = &x - &sys.b * &uk * h;
        let resolve = |e_old: &Vector| -> Result<Vector> {
            let v = &q * (&w + &sys.j * e_old * h) + &a;
            let z = scaled.prox(&(&d_inv * &v), h)?;
            Ok(&d * z)
        };
        let mut e_new = resolve(&e)?;
        let mut iterations = 1;
        let mut residual = 0.0;
        if skew {
            loop {
                let next = resolve(&e_new)?;
                residual = (&next - &e_new).amax();
                e_new = next;
                iterations += 1;
                if residual <= tol::PROX_RESIDUAL * e_new.amax().max(1.0) {
                    break;
                }
                if iterations >= tol::PROX_MAX_ITER {
                    return Err(Error::InnerNonConvergence { step: k, residual });
                }
            }
        }
        let x_new = match &chol {
            None => Vector::from_iterator(sys.n(), (0..sys.n()).map(|i| (e_new[i] - a[i]) / q[(i, i)])),
            Some(c) => c.solve(&(&e_new - &a)),
        };
        let v = &q * (&w + &sys.j * &e_new * h) + &a;
        let selection = match &chol {
            None => Vector::from_iterator(sys.n(), (0..sys.n()).map(|i| (v[i] - e_new[i]) / q[(i, i)] / h)),
            Some(c) => c.solve(&(&v - &e_new)) / h,
        };
        let stuck = stuck_coordinates(&p, &e_new, &selection)?;
        check_state(&x_new, k + 1)?;
        x = x_new;
        e = e_new;
        diagnostics.push(StepDiagnostics { inner_iterations: iterations, residual, selection: Some(selection), stuck });
    }
    Ok(Trajectory { times, states, inputs, outputs, diagnostics })
}

fn implicit_output(sys: &ExplicitConvexIph, e: &Vector, u: &Vector) -> Vector {
    let n = sys.n();
    let gu = sys
        .k
        .subgrad(&linalg::vcat(&[e, u]))
        .ok()
        .flatten()
        .map_or_else(|| Vector::zeros(sys.m()), |g| g.rows(n, sys.m()).into_owned());
    gu + sys.b.transpose() * e
}

fn stuck_coordinates(p: &ConvexFunction, e: &Vector, g: &Vector) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for i in 0..e.len() {
        let mut dir = Vector::zeros(e.len());
        dir[i] = 1.0;
        let hi = p.directional_derivative(e, &dir)?;
        let lo = -p.directional_derivative(e, &(-&dir))?;
        if hi - lo > 1e-12 && g[i] > lo && g[i] < hi {
            out.push(i);
        }
    }
    Ok(out)
}

/// Discrete energy balance of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAudit {
    /// H(x_{k+1}) − H(x_k).
    pub delta_h: Vec<f64>,
    /// ∫⟨u, y_p⟩ over the step.
    pub supply: Vec<f64>,
    /// ∫⟨(e, u), ∇k⟩ + ⟨e, c(e)⟩ over the step.
    pub dissipation: Vec<f64>,
    /// ΔH − supply + dissipation; zero for the exact flow.
    pub residual: Vec<f64>,
    pub max_residual: f64,
    /// C with |residual_k| ≈ C·dt² (median fit).
    pub fitted_c: f64,
    /// Steps whose residual exceeds ten times the fitted bound.
    pub flagged: Vec<usize>,
}

impl EnergyAudit {
    pub fn total_abs_residual(&self) -> f64 {
        self.residual.iter().map(|r| r.abs()).sum()
    }
}

/// Energy audit. Steps with a recorded prox selection use the implicit
/// balance at the new point; others use the trapezoidal rule.
pub fn energy_audit(sys: &ExplicitConvexIph, traj: &Trajectory) -> Result<EnergyAudit> {
    let steps = traj.len().saturating_sub(1);
    let mut delta_h = Vec::with_capacity(steps);
    let mut supply = Vec::with_capacity(steps);
    let mut dissipation = Vec::with_capacity(steps);
    let mut residual = Vec::with_capacity(steps);
    let mut scaled = Vec::with_capacity(steps);
    for k in 0..steps {
        let h = traj.times[k + 1] - traj.times[k];
        let (x0, x1, u0) = (&traj.states[k], &traj.states[k + 1], &traj.inputs[k]);
        let dh = sys.h.value(x1)? - sys.h.value(x0)?;
        let (s, dis) = match traj.diagnostics.get(k).and_then(|d| d.selection.as_ref()) {
            Some(g) => {
                let e1 = sys.h.grad(x1)?;
                let n = sys.n();
                let gu = sys
                    .k
                    .subgrad(&linalg::vcat(&[&e1, u0]))?
                    .map_or_else(|| Vector::zeros(sys.m()), |v| v.rows(n, sys.m()).into_owned());
                let yp = &gu - sys.b.transpose() * &e1;
                (h * u0.dot(&yp), h * (e1.dot(g) + u0.dot(&gu)))
            }
            None => {
                let u1 = &traj.inputs[k + 1];
                let s0 = u0.dot(&sys.passive_output(x0, u0)?);
                let s1 = u1.dot(&sys.passive_output(x1, u1)?);
                let d0 = sys.dissipation(x0, u0)?;
                let d1 = sys.dissipation(x1, u1)?;
                (0.5 * h * (s0 + s1), 0.5 * h * (d0 + d1))
            }
        };
        let r = dh - s + dis;
        delta_h.push(dh);
        supply.push(s);
        dissipation.push(dis);
        residual.push(r);
        scaled.push(r.abs() / (h * h));
    }
    let fitted_c = median(&scaled);
    let flagged = (0..steps)
        .filter(|&k| {
            let h = traj.times[k + 1] - traj.times[k];
            residual[k].abs() > (10.0 * fitted_c * h * h).max(1e-12)
        })
        .collect();
    let max_residual = residual.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    Ok(EnergyAudit { delta_h, supply, dissipation, residual, max_residual, fitted_c, flagged })
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}
