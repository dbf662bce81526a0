//! Extended-real-valued convex functions as immutable expression trees.
//!
//! Only convex primitives and convexity-preserving combinators are
//! expressible, so every value is a proper convex function. Subgradients,
//! proximal maps and (partial) conjugates are computed exactly on the
//! rule-supported subclasses; see [`ConvexFunction::prox`] and
//! [`ConvexFunction::conjugate`].

mod conjugate;
mod prox;
mod quadform;
mod restrict;
mod sep;

use std::fmt;
use std::ops::Add;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::tol;

pub use quadform::{Curvature, Elimination, QuadraticForm};

/// A value in (−∞, +∞]. Minus infinity is not representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInf,
}

impl ExtendedReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    /// The value as an `f64`, with `+∞` mapped to `f64::INFINITY`.
    pub fn value(self) -> f64 {
        match self {
            ExtendedReal::Finite(v) => v,
            ExtendedReal::PosInf => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::PosInf => None,
        }
    }
}

impl Add for ExtendedReal {
    type Output = ExtendedReal;
    fn add(self, rhs: ExtendedReal) -> ExtendedReal {
        match (self, rhs) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::Finite(a + b),
            _ => ExtendedReal::PosInf,
        }
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::PosInf => write!(f, "+inf"),
        }
    }
}

/// Nodes of the expression tree.
#[derive(Debug, Clone)]
pub enum Node {
    /// ½xᵀQx + aᵀx + c with Q symmetric PSD.
    QuadraticAffine {
        q: Mat,
        a: Vector,
        c: f64,
    },
    /// Σ wᵢ|xᵢ| with w ≥ 0.
    WeightedL1 {
        w: Vector,
    },
    /// Indicator of {x : Ax = b}.
    IndicatorAffine {
        a: Mat,
        b: Vector,
    },
    /// Indicator of {lo ≤ x ≤ hi}; bounds may be infinite.
    IndicatorBox {
        lo: Vector,
        hi: Vector,
    },
    Zero(usize),
    Sum(Vec<ConvexFunction>),
    /// Blocks acting on consecutive coordinate ranges.
    SeparableSum(Vec<ConvexFunction>),
    /// x ↦ inner(Lx + shift).
    AffinePrecompose {
        inner: ConvexFunction,
        l: Mat,
        shift: Vector,
    },
}

#[derive(Debug, Clone)]
pub struct ConvexFunction(Arc<Node>);

fn check_finite(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be finite")))
    }
}

fn check_finite_mat(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be finite")))
    }
}

impl ConvexFunction {
    fn wrap(node: Node) -> Self {
        ConvexFunction(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    /// ½xᵀQx + aᵀx + c. Q is symmetrized when its asymmetry is at roundoff level.
    pub fn quadratic(q: Mat, a: Vector, c: f64) -> Result<Self> {
        let n = a.len();
        if q.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, got: q.nrows() });
        }
        check_finite_mat(&q, "Q")?;
        check_finite(&a, "a")?;
        if !c.is_finite() {
            return Err(Error::InvalidArgument("c must be finite".into()));
        }
        let scale = linalg::max_abs(&q).max(1.0);
        if linalg::max_abs(&(&q - q.transpose())) > 1e-9 * scale {
            return Err(Error::InvalidArgument("Q must be symmetric".into()));
        }
        let q = linalg::sym(&q);
        let min_eig = linalg::min_eig(&q);
        if min_eig < -tol::PSD * scale {
            return Err(Error::NotPositiveSemidefinite { min_eig });
        }
        Ok(Self::wrap(Node::QuadraticAffine { q, a, c }))
    }

    /// aᵀx + c.
    pub fn linear(a: Vector, c: f64) -> Result<Self> {
        let n = a.len();
        Self::quadratic(Mat::zeros(n, n), a, c)
    }

    pub fn weighted_l1(w: Vector) -> Result<Self> {
        check_finite(&w, "w")?;
        if w.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument("weights must be nonnegative".into()));
        }
        Ok(Self::wrap(Node::WeightedL1 { w }))
    }

    /// |x| on the real line.
    pub fn abs() -> Self {
        Self::wrap(Node::WeightedL1 { w: Vector::from_element(1, 1.0) })
    }

    /// Indicator of {x : Ax = b}; rejects empty sets.
    pub fn indicator_affine(a: Mat, b: Vector) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        check_finite_mat(&a, "A")?;
        check_finite(&b, "b")?;
        let (_, residual) = linalg::lstsq(&a, &b);
        if residual > tol::DOMAIN * b.norm().max(1.0) {
            return Err(Error::InfeasibleConstraint { residual });
        }
        Ok(Self::wrap(Node::IndicatorAffine { a, b }))
    }

    pub fn indicator_box(lo: Vector, hi: Vector) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        for (l, h) in lo.iter().zip(hi.iter()) {
            if l.is_nan() || h.is_nan() || *l == f64::INFINITY || *h == f64::NEG_INFINITY || l > h {
                return Err(Error::InvalidArgument(format!("invalid box bounds [{l}, {h}]")));
            }
        }
        Ok(Self::wrap(Node::IndicatorBox { lo, hi }))
    }

    pub fn zero(n: usize) -> Self {
        Self::wrap(Node::Zero(n))
    }

    pub fn sum(children: Vec<ConvexFunction>) -> Result<Self> {
        let Some(first) = children.first() else {
            return Err(Error::InvalidArgument("sum needs at least one term".into()));
        };
        let n = first.dim();
        for c in &children {
            if c.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, got: c.dim() });
            }
        }
        if children.len() == 1 {
            return Ok(children.into_iter().next().unwrap());
        }
        Ok(Self::wrap(Node::Sum(children)))
    }

    pub fn separable_sum(blocks: Vec<ConvexFunction>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("separable sum needs at least one block".into()));
        }
        if blocks.len() == 1 {
            return Ok(blocks.into_iter().next().unwrap());
        }
        Ok(Self::wrap(Node::SeparableSum(blocks)))
    }

    pub fn affine_precompose(inner: ConvexFunction, l: Mat, shift: Vector) -> Result<Self> {
        if l.nrows() != inner.dim() {
            return Err(Error::DimensionMismatch { expected: inner.dim(), got: l.nrows() });
        }
        if shift.len() != l.nrows() {
            return Err(Error::DimensionMismatch { expected: l.nrows(), got: shift.len() });
        }
        check_finite_mat(&l, "L")?;
        check_finite(&shift, "shift")?;
        Ok(Self::wrap(Node::AffinePrecompose { inner, l, shift }))
    }

    pub fn dim(&self) -> usize {
        match self.node() {
            Node::QuadraticAffine { a, .. } => a.len(),
            Node::WeightedL1 { w } => w.len(),
            Node::IndicatorAffine { a, .. } => a.ncols(),
            Node::IndicatorBox { lo, .. } => lo.len(),
            Node::Zero(n) => *n,
            Node::Sum(cs) => cs[0].dim(),
            Node::SeparableSum(bs) => bs.iter().map(|b| b.dim()).sum(),
            Node::AffinePrecompose { l, .. } => l.ncols(),
        }
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() })
        }
    }

    /// True when no indicator, box or ℓ1 term appears in the tree.
    pub fn is_smooth(&self) -> bool {
        match self.node() {
            Node::QuadraticAffine { .. } | Node::Zero(_) => true,
            Node::WeightedL1 { w } => w.iter().all(|&v| v == 0.0),
            Node::IndicatorAffine { a, .. } => a.nrows() == 0,
            Node::IndicatorBox { lo, hi } => lo.iter().chain(hi.iter()).all(|v| v.is_infinite()),
            Node::Sum(cs) | Node::SeparableSum(cs) => cs.iter().all(|c| c.is_smooth()),
            Node::AffinePrecompose { inner, .. } => inner.is_smooth(),
        }
    }

    pub fn eval(&self, x: &Vector) -> Result<ExtendedReal> {
        self.check_dim(x)?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &Vector) -> ExtendedReal {
        match self.node() {
            Node::QuadraticAffine { q, a, c } => ExtendedReal::Finite(0.5 * x.dot(&(q * x)) + a.dot(x) + c),
            Node::WeightedL1 { w } => ExtendedReal::Finite(w.iter().zip(x.iter()).map(|(w, v)| w * v.abs()).sum()),
            Node::IndicatorAffine { a, b } => {
                if (a * x - b).amax() <= tol::DOMAIN {
                    ExtendedReal::Finite(0.0)
                } else {
                    ExtendedReal::PosInf
                }
            }
            Node::IndicatorBox { lo, hi } => {
                let inside =
                    x.iter().zip(lo.iter().zip(hi.iter())).all(|(v, (l, h))| *v >= l - tol::DOMAIN && *v <= h + tol::DOMAIN);
                if inside {
                    ExtendedReal::Finite(0.0)
                } else {
                    ExtendedReal::PosInf
                }
            }
            Node::Zero(_) => ExtendedReal::Finite(0.0),
            Node::Sum(cs) => cs.iter().fold(ExtendedReal::Finite(0.0), |acc, c| acc + c.eval_unchecked(x)),
            Node::SeparableSum(bs) => {
                let mut off = 0;
                let mut acc = ExtendedReal::Finite(0.0);
                for b in bs {
                    let n = b.dim();
                    acc = acc + b.eval_unchecked(&x.rows(off, n).into_owned());
                    off += n;
                }
                acc
            }
            Node::AffinePrecompose { inner, l, shift } => inner.eval_unchecked(&(l * x + shift)),
        }
    }

    /// One element of ∂φ(x), or `None` outside the domain.
    ///
    /// Primitives return their minimal-norm subgradient (0 at ℓ1 kinks and
    /// on indicator sets); combinators add or pull back the selections of
    /// their children.
    pub fn subgrad(&self, x: &Vector) -> Result<Option<Vector>> {
        self.check_dim(x)?;
        Ok(self.subgrad_unchecked(x))
    }

    fn subgrad_unchecked(&self, x: &Vector) -> Option<Vector> {
        match self.node() {
            Node::QuadraticAffine { q, a, .. } => Some(q * x + a),
            Node::WeightedL1 { w } => Some(Vector::from_iterator(
                x.len(),
                w.iter().zip(x.iter()).map(|(w, v)| {
                    if *v > 0.0 {
                        *w
                    } else if *v < 0.0 {
                        -*w
                    } else {
                        0.0
                    }
                }),
            )),
            Node::IndicatorAffine { .. } | Node::IndicatorBox { .. } => {
                self.eval_unchecked(x).is_finite().then(|| Vector::zeros(x.len()))
            }
            Node::Zero(n) => Some(Vector::zeros(*n)),
            Node::Sum(cs) => {
                let mut g = Vector::zeros(x.len());
                for c in cs {
                    g += c.subgrad_unchecked(x)?;
                }
                Some(g)
            }
            Node::SeparableSum(bs) => {
                let mut g = Vector::zeros(x.len());
                let mut off = 0;
                for b in bs {
                    let n = b.dim();
                    let gb = b.subgrad_unchecked(&x.rows(off, n).into_owned())?;
                    g.rows_mut(off, n).copy_from(&gb);
                    off += n;
                }
                Some(g)
            }
            Node::AffinePrecompose { inner, l, shift } => inner.subgrad_unchecked(&(l * x + shift)).map(|g| l.transpose() * g),
        }
    }

    /// One-sided directional derivative φ'(x; d) at a domain point; may be +∞.
    pub fn directional_derivative(&self, x: &Vector, d: &Vector) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(d)?;
        if !self.eval_unchecked(x).is_finite() {
            return Err(Error::InvalidArgument("point outside the domain".into()));
        }
        Ok(self.dd(x, d))
    }

    fn dd(&self, x: &Vector, d: &Vector) -> f64 {
        match self.node() {
            Node::QuadraticAffine { q, a, .. } => (q * x + a).dot(d),
            Node::WeightedL1 { w } => w
                .iter()
                .zip(x.iter().zip(d.iter()))
                .map(|(w, (v, dv))| {
                    if *v > 0.0 {
                        w * dv
                    } else if *v < 0.0 {
                        -w * dv
                    } else {
                        w * dv.abs()
                    }
                })
                .sum(),
            Node::IndicatorAffine { a, .. } => {
                if (a * d).amax() <= tol::DOMAIN * d.amax().max(1.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Node::IndicatorBox { lo, hi } => {
                for i in 0..x.len() {
                    if (d[i] > 0.0 && x[i] >= hi[i] - tol::DOMAIN) || (d[i] < 0.0 && x[i] <= lo[i] + tol::DOMAIN) {
                        return f64::INFINITY;
                    }
                }
                0.0
            }
            Node::Zero(_) => 0.0,
            Node::Sum(cs) => cs.iter().map(|c| c.dd(x, d)).sum(),
            Node::SeparableSum(bs) => {
                let mut off = 0;
                let mut acc = 0.0;
                for b in bs {
                    let n = b.dim();
                    acc += b.dd(&x.rows(off, n).into_owned(), &d.rows(off, n).into_owned());
                    off += n;
                }
                acc
            }
            Node::AffinePrecompose { inner, l, shift } => inner.dd(&(l * x + shift), &(l * d)),
        }
    }

    /// ∂φ(x) = [φ'₋(x), φ'₊(x)] for a one-dimensional φ; `None` outside the domain.
    pub fn subdiff_set_1d(&self, x: f64) -> Result<Option<(f64, f64)>> {
        if self.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: self.dim() });
        }
        let xv = Vector::from_element(1, x);
        if !self.eval_unchecked(&xv).is_finite() {
            return Ok(None);
        }
        let right = self.dd(&xv, &Vector::from_element(1, 1.0));
        let left = -self.dd(&xv, &Vector::from_element(1, -1.0));
        Ok(Some((left, right)))
    }

    /// Lower bound on φ*(e): max of ⟨e,f⟩ − φ(f) over a uniform grid with
    /// `grid` points per axis on [−radius, radius]ⁿ. Error shrinks with the
    /// grid spacing; returns −∞ when no grid point lies in the domain.
    pub fn numeric_conjugate_eval(&self, e: &Vector, radius: f64, grid: usize) -> Result<f64> {
        self.check_dim(e)?;
        if !(radius.is_finite() && radius > 0.0) || grid == 0 {
            return Err(Error::InvalidArgument("radius must be positive and grid nonzero".into()));
        }
        let n = self.dim();
        let step = if grid > 1 { 2.0 * radius / (grid - 1) as f64 } else { 0.0 };
        let coord = |k: usize| if grid > 1 { -radius + step * k as f64 } else { 0.0 };
        let mut idx = vec![0usize; n];
        let mut best = f64::NEG_INFINITY;
        let mut f = Vector::zeros(n);
        loop {
            for i in 0..n {
                f[i] = coord(idx[i]);
            }
            if let ExtendedReal::Finite(v) = self.eval_unchecked(&f) {
                best = best.max(e.dot(&f) - v);
            }
            let mut i = 0;
            loop {
                if i == n {
                    return Ok(best);
                }
                idx[i] += 1;
                if idx[i] < grid {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }

    /// Quadratic normal form ½xᵀQx + aᵀx + c + ι{Ax=b}, when the tree has one.
    pub fn quadratic_form(&self) -> Option<QuadraticForm> {
        quadform::normalize(self)
    }
}

/// Coordinatewise bounds of dom φ when the domain is a box.
pub fn domain_box(f: &ConvexFunction) -> Option<(Vector, Vector)> {
    let s = sep::normalize(f)?;
    Some((
        Vector::from_iterator(s.coords.len(), s.coords.iter().map(|c| c.lo)),
        Vector::from_iterator(s.coords.len(), s.coords.iter().map(|c| c.hi)),
    ))
}

#[cfg(test)]
mod tests;
