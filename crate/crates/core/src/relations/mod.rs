//! Monotone relations over flow/effort port spaces.
//!
//! A relation over a [`PortSpace`] of total dimension n is a set of pairs
//! (f, e) ∈ ℝⁿ × ℝⁿ. Flows and efforts of each port occupy the same
//! coordinate range.

mod check;
mod compose;

use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::convexfun::{ConvexFunction, ExtendedReal, QuadraticForm};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::tol;

pub use check::{
    check_cyclic, check_monotone, cyclic_sum, is_dirac, is_resistive, is_separable, resistive_generator, CheckReport, Method,
    Verdict, Witness,
};
pub use compose::{compose, compose_feedback, qualification_check, FeedbackComposition};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub dim: usize,
}

impl Port {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Port { name: name.into(), dim }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortSpace {
    ports: Vec<Port>,
}

impl PortSpace {
    pub fn new(ports: Vec<Port>) -> Result<Self> {
        for (i, p) in ports.iter().enumerate() {
            if p.dim == 0 {
                return Err(Error::InvalidArgument(format!("port {} has dimension 0", p.name)));
            }
            if ports[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::InvalidArgument(format!("duplicate port name {}", p.name)));
            }
        }
        Ok(PortSpace { ports })
    }

    pub fn single(name: &str, dim: usize) -> Self {
        PortSpace { ports: vec![Port::new(name, dim.max(1))] }
    }

    pub fn ports(&self) -> &[Port] {
        &self.ports
    }

    pub fn dim(&self) -> usize {
        self.ports.iter().map(|p| p.dim).sum()
    }

    /// Offset and dimension of a named port.
    pub fn range(&self, name: &str) -> Option<(usize, usize)> {
        let mut off = 0;
        for p in &self.ports {
            if p.name == name {
                return Some((off, p.dim));
            }
            off += p.dim;
        }
        None
    }

    pub fn without(&self, name: &str) -> PortSpace {
        PortSpace { ports: self.ports.iter().filter(|p| p.name != name).cloned().collect() }
    }

    pub fn concat(&self, other: &PortSpace) -> Result<PortSpace> {
        let mut ports = self.ports.clone();
        ports.extend(other.ports.iter().cloned());
        PortSpace::new(ports).map_err(|e| Error::PortMismatch(e.to_string()))
    }

    /// Coordinate indices of all ports except `name`, in order.
    pub fn coords_without(&self, name: &str) -> Vec<usize> {
        let (off, d) = self.range(name).unwrap_or((usize::MAX, 0));
        (0..self.dim()).filter(|&i| i < off || i >= off + d).collect()
    }
}

/// {(f, e) : K_f f + K_e e = 0}.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRelation {
    pub k_f: Mat,
    pub k_e: Mat,
}

impl LinearRelation {
    pub fn new(k_f: Mat, k_e: Mat) -> Result<Self> {
        if k_f.shape() != k_e.shape() {
            return Err(Error::InvalidArgument("K_f and K_e must have equal shapes".into()));
        }
        let k = k_f.nrows();
        if linalg::rank(&linalg::hstack(&[&k_f, &k_e])) != k {
            return Err(Error::InvalidArgument("rows of [K_f K_e] must be independent".into()));
        }
        Ok(LinearRelation { k_f, k_e })
    }

    /// The relation spanned by the columns of `z` = [Z_f; Z_e].
    pub fn from_span(z: &Mat, n: usize) -> Self {
        let k = linalg::null_space(&z.transpose()).transpose();
        LinearRelation { k_f: k.columns(0, n).into_owned(), k_e: k.columns(n, n).into_owned() }
    }

    pub fn dim(&self) -> usize {
        self.k_f.ncols()
    }

    /// Orthonormal basis [Z_f; Z_e] of the relation subspace.
    pub fn basis(&self) -> Mat {
        linalg::null_space(&linalg::hstack(&[&self.k_f, &self.k_e]))
    }

    pub fn subspace_dim(&self) -> usize {
        2 * self.dim() - self.k_f.nrows()
    }

    pub fn residual(&self, f: &Vector, e: &Vector) -> f64 {
        (&self.k_f * f + &self.k_e * e).norm()
    }
}

/// {(f, e) : S e ∈ ∂φ(S f)} (flow orientation) or {(f, e) : S f ∈ ∂φ(S e)}
/// (effort orientation), with S a diagonal sign matrix.
#[derive(Debug, Clone)]
pub struct SubdiffGraph {
    pub phi: ConvexFunction,
    pub sign: Vec<f64>,
    pub orientation: Orientation,
    conj: Arc<OnceLock<Option<ConvexFunction>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// φ is a function of the flows; efforts are its subgradients.
    Flow,
    /// φ is a function of the efforts; flows are its subgradients.
    Effort,
}

impl SubdiffGraph {
    pub fn new(phi: ConvexFunction, sign: Vec<f64>, orientation: Orientation) -> Result<Self> {
        if sign.len() != phi.dim() {
            return Err(Error::DimensionMismatch { expected: phi.dim(), got: sign.len() });
        }
        if sign.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidArgument("sign entries must be +1 or -1".into()));
        }
        Ok(SubdiffGraph { phi, sign, orientation, conj: Arc::new(OnceLock::new()) })
    }

    pub fn plain(phi: ConvexFunction, orientation: Orientation) -> Self {
        let n = phi.dim();
        SubdiffGraph { phi, sign: vec![1.0; n], orientation, conj: Arc::new(OnceLock::new()) }
    }

    pub fn conjugate(&self) -> Option<&ConvexFunction> {
        self.conj.get_or_init(|| self.phi.conjugate().ok()).as_ref()
    }

    fn signed(&self, x: &Vector) -> Vector {
        Vector::from_iterator(x.len(), x.iter().zip(&self.sign).map(|(v, s)| v * s))
    }

    /// φ with the sign map absorbed: the relation is ∂(φ ∘ S) in its orientation.
    pub fn unsigned_phi(&self) -> Result<ConvexFunction> {
        if self.sign.iter().all(|&s| s == 1.0) {
            return Ok(self.phi.clone());
        }
        let s = Mat::from_diagonal(&Vector::from_column_slice(&self.sign));
        ConvexFunction::affine_precompose(self.phi.clone(), s, Vector::zeros(self.sign.len()))
    }

    /// (argument, subgradient) split of a point according to the orientation.
    fn split<'a>(&self, f: &'a Vector, e: &'a Vector) -> (&'a Vector, &'a Vector) {
        match self.orientation {
            Orientation::Flow => (f, e),
            Orientation::Effort => (e, f),
        }
    }

    fn resolvent_residual(&self, f: &Vector, e: &Vector) -> f64 {
        let (x, g) = self.split(f, e);
        let (x, g) = (self.signed(x), self.signed(g));
        match self.phi.prox(&(&x + &g), 1.0) {
            Ok(p) => (p - x).norm(),
            Err(_) => f64::INFINITY,
        }
    }

    /// Fenchel–Young gap φ(x) + φ*(g) − ⟨x, g⟩, or `None` without a conjugate.
    pub fn fenchel_young_gap(&self, f: &Vector, e: &Vector) -> Option<f64> {
        let conj = self.conjugate()?;
        let (x, g) = self.split(f, e);
        let (x, g) = (self.signed(x), self.signed(g));
        let a = self.phi.eval(&x).ok()?;
        let b = conj.eval(&g).ok()?;
        Some(match (a, b) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => a + b - x.dot(&g),
            _ => f64::INFINITY,
        })
    }
}

/// Piecewise-polynomial scalar characteristic y = g(x).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCurve {
    /// Strictly increasing breakpoints; piece k covers [breaks[k-1], breaks[k]).
    pub breaks: Vec<f64>,
    /// Ascending polynomial coefficients per piece; `breaks.len() + 1` pieces.
    pub coeffs: Vec<Vec<f64>>,
    pub orientation: Orientation,
}

impl ScalarCurve {
    pub fn new(breaks: Vec<f64>, coeffs: Vec<Vec<f64>>, orientation: Orientation) -> Result<Self> {
        if coeffs.len() != breaks.len() + 1 {
            return Err(Error::InvalidArgument("a curve needs one more piece than breakpoints".into()));
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) || breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("breakpoints must be finite and strictly increasing".into()));
        }
        if coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("curve coefficients must be finite".into()));
        }
        Ok(ScalarCurve { breaks, coeffs, orientation })
    }

    /// Tunnel-diode characteristic Φ(x − x0) + y0 with Φ(z) = γz³ − αz.
    pub fn tunnel_diode(gamma: f64, alpha: f64, x0: f64, y0: f64, orientation: Orientation) -> Result<Self> {
        let c0 = -gamma * x0.powi(3) + alpha * x0 + y0;
        let c1 = 3.0 * gamma * x0 * x0 - alpha;
        let c2 = -3.0 * gamma * x0;
        let c3 = gamma;
        ScalarCurve::new(vec![], vec![vec![c0, c1, c2, c3]], orientation)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.breaks.iter().take_while(|&&b| x >= b).count();
        self.coeffs[k].iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let k = self.breaks.iter().take_while(|&&b| x >= b).count();
        let c = &self.coeffs[k];
        (1..c.len()).rev().fold(0.0, |acc, i| acc * x + i as f64 * c[i])
    }
}

/// {(f, e) : f − S e − c(e) ∈ ∂φ(e)} where c adds scalar curve terms
/// coordinatewise. Explicit port-Hamiltonian dynamics live here.
#[derive(Debug, Clone)]
pub struct Field {
    pub phi: Option<ConvexFunction>,
    pub skew: Mat,
    /// (coordinate, curve) pairs contributing `curve(e[i])` to `f[i]`.
    pub curves: Vec<(usize, ScalarCurve)>,
}

impl Field {
    pub fn new(phi: Option<ConvexFunction>, skew: Mat, curves: Vec<(usize, ScalarCurve)>) -> Result<Self> {
        let n = skew.nrows();
        if !skew.is_square() {
            return Err(Error::InvalidArgument("field matrix must be square".into()));
        }
        if let Some(p) = &phi {
            if p.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, got: p.dim() });
            }
        }
        if curves.iter().any(|(i, _)| *i >= n) {
            return Err(Error::InvalidArgument("curve coordinate out of range".into()));
        }
        Ok(Field { phi, skew, curves })
    }

    /// f − S e − c(e), the part that must lie in ∂φ(e).
    pub fn remainder(&self, f: &Vector, e: &Vector) -> Vector {
        let mut r = f - &self.skew * e;
        for (i, c) in &self.curves {
            r[*i] -= c.eval(e[*i]);
        }
        r
    }

    /// The single-valued part S e + c(e).
    pub fn drift(&self, e: &Vector) -> Vector {
        let mut d = &self.skew * e;
        for (i, c) in &self.curves {
            d[*i] += c.eval(e[*i]);
        }
        d
    }
}

/// Composition kept as a pair of relations with an inner feasibility problem.
#[derive(Debug, Clone)]
pub struct Implicit {
    pub a: Box<MonotoneRelation>,
    pub b: Box<MonotoneRelation>,
    pub port_a: String,
    pub port_b: String,
    pub wiring: Wiring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wiring {
    /// f_a = −f_b, e_a = e_b on the shared port.
    Canonical,
    /// e_a = f_b, e_b = f_a between the wired ports.
    Feedback,
}

#[derive(Debug, Clone)]
pub enum RelationKind {
    Linear(LinearRelation),
    Subdiff(SubdiffGraph),
    /// f = J e with J skew.
    Skew(Mat),
    Curve(ScalarCurve),
    Field(Field),
    /// {(f, e) : f ∈ ∂K(e)} for a quadratic form K that need not be convex.
    Generator(QuadraticForm),
    Product(Vec<MonotoneRelation>),
    Implicit(Implicit),
}

pub const FLAG_IMPLICIT: &str = "implicit: membership tests only";
pub const FLAG_NO_MAXIMALITY: &str = "no maximality certificate";
pub const FLAG_STATIONARY: &str = "generator is a stationary value, inner block indefinite";

#[derive(Debug, Clone)]
pub struct MonotoneRelation {
    pub space: PortSpace,
    pub kind: RelationKind,
    pub flags: Vec<String>,
}

impl MonotoneRelation {
    fn make(space: PortSpace, kind: RelationKind) -> Self {
        MonotoneRelation { space, kind, flags: vec![] }
    }

    fn expect_dim(space: &PortSpace, n: usize) -> Result<()> {
        if space.dim() == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: space.dim(), got: n })
        }
    }

    pub fn linear(space: PortSpace, rel: LinearRelation) -> Result<Self> {
        Self::expect_dim(&space, rel.dim())?;
        Ok(Self::make(space, RelationKind::Linear(rel)))
    }

    pub fn subdiff(space: PortSpace, g: SubdiffGraph) -> Result<Self> {
        Self::expect_dim(&space, g.phi.dim())?;
        Ok(Self::make(space, RelationKind::Subdiff(g)))
    }

    pub fn skew(space: PortSpace, j: Mat) -> Result<Self> {
        Self::expect_dim(&space, j.nrows())?;
        if !j.is_square() || linalg::max_abs(&(&j + j.transpose())) > tol::SKEW {
            return Err(Error::InvalidArgument("J must be skew-symmetric".into()));
        }
        Ok(Self::make(space, RelationKind::Skew(j)))
    }

    pub fn curve(space: PortSpace, c: ScalarCurve) -> Result<Self> {
        Self::expect_dim(&space, 1)?;
        Ok(Self::make(space, RelationKind::Curve(c)))
    }

    pub fn field(space: PortSpace, f: Field) -> Result<Self> {
        Self::expect_dim(&space, f.skew.nrows())?;
        Ok(Self::make(space, RelationKind::Field(f)))
    }

    pub fn generator(space: PortSpace, k: QuadraticForm) -> Result<Self> {
        Self::expect_dim(&space, k.dim())?;
        Ok(Self::make(space, RelationKind::Generator(k)))
    }

    pub fn product(parts: Vec<MonotoneRelation>) -> Result<Self> {
        let mut space = PortSpace { ports: vec![] };
        for p in &parts {
            space = space.concat(&p.space)?;
        }
        Ok(Self::make(space, RelationKind::Product(parts)))
    }

    /// Kernel-form relation {R_f f − R_e e = 0}.
    pub fn resistive(space: PortSpace, r_f: Mat, r_e: Mat) -> Result<Self> {
        Self::linear(space, LinearRelation::new(r_f, -r_e)?)
    }

    /// Kirchhoff relation ker D × im Dᵀ.
    pub fn kirchhoff(space: PortSpace, d: &Mat) -> Result<Self> {
        let n = d.ncols();
        let rows = linalg::range_basis(&d.transpose()).transpose();
        let ker = linalg::null_space(d).transpose();
        let k_f = linalg::vstack(&[&rows, &Mat::zeros(ker.nrows(), n)]);
        let k_e = linalg::vstack(&[&Mat::zeros(rows.nrows(), n), &ker]);
        Self::linear(space, LinearRelation::new(k_f, k_e)?)
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn with_flag(mut self, flag: &str) -> Self {
        if !self.flags.iter().any(|f| f == flag) {
            self.flags.push(flag.to_string());
        }
        self
    }

    /// Skew J of a pure skew graph, also for linear relations of the form f = J e.
    pub fn as_linear(&self) -> Option<LinearRelation> {
        let n = self.dim();
        match &self.kind {
            RelationKind::Linear(l) => Some(l.clone()),
            RelationKind::Skew(j) => Some(LinearRelation { k_f: Mat::identity(n, n), k_e: -j }),
            RelationKind::Field(f) if f.phi.is_none() && f.curves.is_empty() => {
                Some(LinearRelation { k_f: Mat::identity(n, n), k_e: -f.skew.clone() })
            }
            RelationKind::Product(parts) => {
                let ls: Option<Vec<LinearRelation>> = parts.iter().map(|p| p.as_linear()).collect();
                let ls = ls?;
                let kf: Vec<&Mat> = ls.iter().map(|l| &l.k_f).collect();
                let ke: Vec<&Mat> = ls.iter().map(|l| &l.k_e).collect();
                Some(LinearRelation { k_f: linalg::block_diag(&kf), k_e: linalg::block_diag(&ke) })
            }
            _ => None,
        }
    }

    /// Distance-like residual that vanishes exactly on the relation.
    pub fn residual(&self, f: &Vector, e: &Vector) -> f64 {
        match &self.kind {
            RelationKind::Linear(l) => l.residual(f, e),
            RelationKind::Skew(j) => (f - j * e).norm(),
            RelationKind::Subdiff(g) => g.resolvent_residual(f, e),
            RelationKind::Curve(c) => match c.orientation {
                Orientation::Flow => (e[0] - c.eval(f[0])).abs(),
                Orientation::Effort => (f[0] - c.eval(e[0])).abs(),
            },
            RelationKind::Field(fl) => {
                let r = fl.remainder(f, e);
                match &fl.phi {
                    None => r.norm(),
                    Some(phi) => match phi.prox(&(e + &r), 1.0) {
                        Ok(p) => (p - e).norm(),
                        Err(_) => f64::INFINITY,
                    },
                }
            }
            RelationKind::Generator(k) => {
                let feas = if k.is_constrained() { (&k.cons_a * e - &k.cons_b).norm() } else { 0.0 };
                let g = f - k.gradient(e);
                let n = linalg::null_space(&k.cons_a);
                feas + (n.transpose() * g).norm()
            }
            RelationKind::Product(parts) => {
                let mut off = 0;
                let mut acc = 0.0;
                for p in parts {
                    let d = p.dim();
                    let r = p.residual(&f.rows(off, d).into_owned(), &e.rows(off, d).into_owned());
                    acc += r * r;
                    off += d;
                }
                acc.sqrt()
            }
            RelationKind::Implicit(imp) => compose::implicit_residual(self, imp, f, e),
        }
    }

    /// Membership test: Fenchel–Young gap for subdifferential graphs with a
    /// known conjugate, residual otherwise.
    pub fn membership(&self, f: &Vector, e: &Vector, tol: f64) -> bool {
        if f.len() != self.dim() || e.len() != self.dim() {
            return false;
        }
        if let RelationKind::Subdiff(g) = &self.kind {
            if let Some(gap) = g.fenchel_young_gap(f, e) {
                return gap.abs() <= tol;
            }
        }
        self.residual(f, e) <= tol
    }

    /// Maps a free parameter vector of length 2n onto a point of the relation.
    /// Returns `None` for implicit relations.
    pub fn point_from(&self, v: &Vector) -> Option<(Vector, Vector)> {
        let n = self.dim();
        match &self.kind {
            RelationKind::Linear(l) => {
                let z = l.basis();
                let d = z.ncols();
                let x = &z * v.rows(0, d.min(v.len()));
                Some((x.rows(0, n).into_owned(), x.rows(n, n).into_owned()))
            }
            RelationKind::Skew(j) => {
                let e = v.rows(0, n).into_owned();
                Some((j * &e, e))
            }
            RelationKind::Subdiff(g) => {
                let w = g.signed(&v.rows(0, n).into_owned());
                let x = g.phi.prox(&w, 1.0).ok()?;
                let s = &w - &x;
                let (x, s) = (g.signed(&x), g.signed(&s));
                Some(match g.orientation {
                    Orientation::Flow => (x, s),
                    Orientation::Effort => (s, x),
                })
            }
            RelationKind::Curve(c) => {
                let x = v[0];
                let y = c.eval(x);
                Some(match c.orientation {
                    Orientation::Flow => (Vector::from_element(1, x), Vector::from_element(1, y)),
                    Orientation::Effort => (Vector::from_element(1, y), Vector::from_element(1, x)),
                })
            }
            RelationKind::Field(fl) => {
                let w = v.rows(0, n).into_owned();
                let (e, sub) = match &fl.phi {
                    None => (w, Vector::zeros(n)),
                    Some(phi) => {
                        let e = phi.prox(&w, 1.0).ok()?;
                        let s = &w - &e;
                        (e, s)
                    }
                };
                Some((sub + fl.drift(&e), e))
            }
            RelationKind::Generator(k) => {
                let (x0, nb) = k.affine_param().ok()?;
                let d = nb.ncols();
                let e = x0 + &nb * v.rows(0, d);
                let mu_len = k.cons_a.nrows().min(n);
                let mut f = k.gradient(&e);
                if mu_len > 0 {
                    f += k.cons_a.rows(0, mu_len).transpose() * v.rows(n, mu_len);
                }
                Some((f, e))
            }
            RelationKind::Product(parts) => {
                let mut f = Vector::zeros(n);
                let mut e = Vector::zeros(n);
                let mut off = 0;
                for p in parts {
                    let d = p.dim();
                    let mut sub = Vector::zeros(2 * d);
                    sub.rows_mut(0, d).copy_from(&v.rows(off, d));
                    sub.rows_mut(d, d).copy_from(&v.rows(n + off, d));
                    let (pf, pe) = p.point_from(&sub)?;
                    f.rows_mut(off, d).copy_from(&pf);
                    e.rows_mut(off, d).copy_from(&pe);
                    off += d;
                }
                Some((f, e))
            }
            RelationKind::Implicit(_) => None,
        }
    }

    /// A random point of the relation from parameters uniform on [−radius, radius].
    pub fn sample<R: Rng>(&self, rng: &mut R, radius: f64) -> Option<(Vector, Vector)> {
        let v = Vector::from_fn(2 * self.dim(), |_, _| rng.random_range(-radius..=radius));
        self.point_from(&v)
    }
}

#[cfg(test)]
mod tests;
