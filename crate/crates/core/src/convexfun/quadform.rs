//! Quadratic forms ½xᵀQx + aᵀx + c restricted to an affine set {Ax = b}.
//!
//! Q may be indefinite here: this type carries generating functions such as
//! P(e) + eᵀBu that are convex only in some coordinates, and the stationary
//! elimination and partial conjugation that act on them.

use super::{ConvexFunction, ExtendedReal, Node};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::tol;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub q: Mat,
    pub a: Vector,
    pub c: f64,
    /// Constraint rows `A`; the form is +∞ off {Ax = b}.
    pub cons_a: Mat,
    pub cons_b: Vector,
}

/// Sign structure of the eliminated block on its feasible directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    PositiveSemidefinite,
    NegativeSemidefinite,
    Indefinite,
}

/// Result of eliminating coordinates by stationarity.
#[derive(Debug, Clone)]
pub struct Elimination {
    /// Stationary value as a form over the remaining coordinates. Its
    /// constraints include both feasibility and the range condition.
    pub form: QuadraticForm,
    pub curvature: Curvature,
    /// Rows `(R, r)` with `R o = r` needed for a stationary point to exist.
    pub range_a: Mat,
    pub range_b: Vector,
    /// Null directions of the eliminated block (columns, in inner coordinates).
    pub flat: Mat,
    /// Stationary inner point as an affine map `z = Z o + ζ` of the outer coordinates.
    pub recover: (Mat, Vector),
    pub outer: Vec<usize>,
    pub inner: Vec<usize>,
}

impl QuadraticForm {
    pub fn new(q: Mat, a: Vector, c: f64) -> Self {
        let n = a.len();
        QuadraticForm { q: linalg::sym(&q), a, c, cons_a: Mat::zeros(0, n), cons_b: Vector::zeros(0) }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(Mat::zeros(n, n), Vector::zeros(n), 0.0)
    }

    pub fn constraint(a: Mat, b: Vector) -> Self {
        let n = a.ncols();
        QuadraticForm { q: Mat::zeros(n, n), a: Vector::zeros(n), c: 0.0, cons_a: a, cons_b: b }
    }

    pub fn with_constraint(mut self, a: &Mat, b: &Vector) -> Self {
        self.cons_a = linalg::vstack(&[&self.cons_a, a]);
        self.cons_b = linalg::vcat(&[&self.cons_b, b]);
        self
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn is_constrained(&self) -> bool {
        self.cons_a.nrows() > 0
    }

    pub fn value_unconstrained(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.a.dot(x) + self.c
    }

    pub fn is_feasible(&self, x: &Vector) -> bool {
        self.cons_a.nrows() == 0 || (&self.cons_a * x - &self.cons_b).amax() <= tol::DOMAIN
    }

    pub fn eval(&self, x: &Vector) -> ExtendedReal {
        if self.is_feasible(x) {
            ExtendedReal::Finite(self.value_unconstrained(x))
        } else {
            ExtendedReal::PosInf
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        &self.q * x + &self.a
    }

    pub fn add(&self, o: &QuadraticForm) -> Result<QuadraticForm> {
        if o.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: o.dim() });
        }
        Ok(QuadraticForm {
            q: &self.q + &o.q,
            a: &self.a + &o.a,
            c: self.c + o.c,
            cons_a: linalg::vstack(&[&self.cons_a, &o.cons_a]),
            cons_b: linalg::vcat(&[&self.cons_b, &o.cons_b]),
        })
    }

    pub fn neg(&self) -> QuadraticForm {
        QuadraticForm { q: -&self.q, a: -&self.a, c: -self.c, cons_a: self.cons_a.clone(), cons_b: self.cons_b.clone() }
    }

    /// x ↦ self(Lx + s).
    pub fn compose_affine(&self, l: &Mat, s: &Vector) -> QuadraticForm {
        let qs = &self.q * s;
        QuadraticForm {
            q: linalg::sym(&(l.transpose() * &self.q * l)),
            a: l.transpose() * (&qs + &self.a),
            c: 0.5 * s.dot(&qs) + self.a.dot(s) + self.c,
            cons_a: &self.cons_a * l,
            cons_b: &self.cons_b - &self.cons_a * s,
        }
    }

    pub fn block_diag(forms: &[QuadraticForm]) -> QuadraticForm {
        let qs: Vec<&Mat> = forms.iter().map(|f| &f.q).collect();
        let avs: Vec<&Vector> = forms.iter().map(|f| &f.a).collect();
        let cas: Vec<&Mat> = forms.iter().map(|f| &f.cons_a).collect();
        let cbs: Vec<&Vector> = forms.iter().map(|f| &f.cons_b).collect();
        QuadraticForm {
            q: linalg::block_diag(&qs),
            a: linalg::vcat(&avs),
            c: forms.iter().map(|f| f.c).sum(),
            cons_a: linalg::block_diag(&cas),
            cons_b: linalg::vcat(&cbs),
        }
    }

    /// Point x0 ⟂ ker A with A x0 = b and an orthonormal basis N of ker A.
    pub fn affine_param(&self) -> Result<(Vector, Mat)> {
        let (x0, residual) = linalg::lstsq(&self.cons_a, &self.cons_b);
        if residual > tol::DOMAIN * self.cons_b.norm().max(1.0) {
            return Err(Error::InfeasibleConstraint { residual });
        }
        Ok((x0, linalg::null_space(&self.cons_a)))
    }

    /// Fixes the listed coordinates to `values` and keeps the rest in order.
    pub fn restrict(&self, coords: &[usize], values: &Vector) -> Result<QuadraticForm> {
        let n = self.dim();
        check_coords(n, coords)?;
        if values.len() != coords.len() {
            return Err(Error::DimensionMismatch { expected: coords.len(), got: values.len() });
        }
        let free: Vec<usize> = (0..n).filter(|i| !coords.contains(i)).collect();
        let l = linalg::selector(n, &free).transpose();
        let mut s = Vector::zeros(n);
        for (k, &i) in coords.iter().enumerate() {
            s[i] = values[k];
        }
        Ok(self.compose_affine(&l, &s))
    }

    /// Eliminates the `inner` coordinates by stationarity of the form over
    /// its feasible set. With positive semidefinite curvature the value is
    /// the infimum, with negative semidefinite curvature the supremum.
    pub fn eliminate(&self, inner: &[usize]) -> Result<Elimination> {
        let n = self.dim();
        check_coords(n, inner)?;
        let outer: Vec<usize> = (0..n).filter(|i| !inner.contains(i)).collect();
        let so = linalg::selector(n, &outer).transpose();
        let si = linalg::selector(n, inner).transpose();
        let a_o = &self.cons_a * &so;
        let a_z = &self.cons_a * &si;

        let p_z = linalg::pinv(&a_z);
        let n_z = linalg::null_space(&a_z);
        let w_z = linalg::null_space(&a_z.transpose());
        let feas_a = w_z.transpose() * &a_o;
        let feas_b = w_z.transpose() * &self.cons_b;

        let z0_o = -(&p_z * &a_o);
        let z0 = &p_z * &self.cons_b;
        let t_o = &so + &si * &z0_o;
        let t_w = &si * &n_z;
        let t = &si * &z0;

        let qt_a = &self.q * &t + &self.a;
        let q_ww = linalg::sym(&(t_w.transpose() * &self.q * &t_w));
        let q_wo = t_w.transpose() * &self.q * &t_o;
        let q_oo = linalg::sym(&(t_o.transpose() * &self.q * &t_o));
        let q_w = t_w.transpose() * &qt_a;
        let q_o = t_o.transpose() * &qt_a;
        let c0 = 0.5 * t.dot(&(&self.q * &t)) + self.a.dot(&t) + self.c;

        let scale = linalg::max_abs(&self.q).max(1.0);
        let curvature = if q_ww.nrows() == 0 {
            Curvature::PositiveSemidefinite
        } else {
            let (ev, _) = linalg::sym_eigen(&q_ww);
            let lo = ev[0];
            let hi = ev[ev.len() - 1];
            if lo >= -tol::PSD * scale {
                Curvature::PositiveSemidefinite
            } else if hi <= tol::PSD * scale {
                Curvature::NegativeSemidefinite
            } else {
                Curvature::Indefinite
            }
        };

        let g = linalg::pinv(&q_ww);
        let k = linalg::null_space(&q_ww);
        let range_a = k.transpose() * &q_wo;
        let range_b = -(k.transpose() * &q_w);
        let flat = &n_z * &k;

        let q_ow = q_wo.transpose();
        let form = QuadraticForm {
            q: linalg::sym(&(&q_oo - &q_ow * &g * &q_wo)),
            a: &q_o - &q_ow * &g * &q_w,
            c: c0 - 0.5 * q_w.dot(&(&g * &q_w)),
            cons_a: linalg::vstack(&[&feas_a, &range_a]),
            cons_b: linalg::vcat(&[&feas_b, &range_b]),
        };
        let recover = (&z0_o - &n_z * &g * &q_wo, &z0 - &n_z * &g * &q_w);
        Ok(Elimination { form, curvature, range_a, range_b, flat, recover, outer, inner: inner.to_vec() })
    }

    /// ψ(s, r) = sup_x [⟨s, x⟩ − self(x, r)] over the listed coordinates x,
    /// with s placed at the same positions. The form must be convex in the
    /// conjugated coordinates. Points r with no feasible x are excluded from
    /// the domain of ψ.
    pub fn partial_conjugate(&self, coords: &[usize]) -> Result<QuadraticForm> {
        let n = self.dim();
        check_coords(n, coords)?;
        let m = coords.len();
        // Variables (v, x): v is the full output vector, x the conjugated block.
        let embed_x = {
            let mut l = Mat::zeros(n, n + m);
            let mut x_pos = 0;
            for i in 0..n {
                if let Some(k) = coords.iter().position(|&c| c == i) {
                    l[(i, n + k)] = 1.0;
                    x_pos += 1;
                } else {
                    l[(i, i)] = 1.0;
                }
            }
            debug_assert_eq!(x_pos, m);
            l
        };
        let base = self.compose_affine(&embed_x, &Vector::zeros(n));
        let mut bil = Mat::zeros(n + m, n + m);
        for (k, &c) in coords.iter().enumerate() {
            bil[(c, n + k)] = -1.0;
            bil[(n + k, c)] = -1.0;
        }
        let f = QuadraticForm { q: &base.q + bil, ..base };
        let inner: Vec<usize> = (n..n + m).collect();
        let el = f.eliminate(&inner)?;
        if el.curvature != Curvature::PositiveSemidefinite {
            return Err(Error::UnsupportedConjugate("form is not convex in the conjugated coordinates".into()));
        }
        let out = el.form.neg();
        if out.is_constrained() {
            out.affine_param().map_err(|_| Error::SingularBlock)?;
        }
        Ok(out)
    }

    /// Removes redundant constraint rows and returns an equivalent form whose
    /// constraint rows are orthonormal.
    pub fn canonical_constraints(&self) -> Result<QuadraticForm> {
        if !self.is_constrained() {
            return Ok(self.clone());
        }
        let (x0, _) = self.affine_param()?;
        let w = linalg::range_basis(&self.cons_a.transpose());
        Ok(QuadraticForm { cons_a: w.transpose(), cons_b: w.transpose() * x0, ..self.clone() })
    }

    /// Convexity on the feasible set, with the reduced Hessian's minimum eigenvalue.
    pub fn reduced_min_eig(&self) -> Result<f64> {
        let (_, nb) = self.affine_param()?;
        Ok(linalg::min_eig(&(nb.transpose() * &self.q * &nb)))
    }

    /// Converts to a [`ConvexFunction`] after projecting Q onto the feasible
    /// directions; fails if the form is not convex there.
    pub fn to_convex(&self) -> Result<ConvexFunction> {
        let n = self.dim();
        if !self.is_constrained() {
            return ConvexFunction::quadratic(self.q.clone(), self.a.clone(), self.c);
        }
        let (x0, nb) = self.affine_param()?;
        let mm = linalg::sym(&(nb.transpose() * &self.q * &nb));
        let scale = linalg::max_abs(&self.q).max(1.0);
        let min_eig = linalg::min_eig(&mm);
        if min_eig < -tol::PSD * scale {
            return Err(Error::NotPositiveSemidefinite { min_eig });
        }
        let p = nb.transpose() * (&self.q * &x0 + &self.a);
        let c0 = self.value_unconstrained(&x0);
        let quad = ConvexFunction::quadratic(linalg::sym(&(&nb * &mm * nb.transpose())), &nb * p, c0)?;
        if nb.ncols() == n {
            return Ok(quad);
        }
        let w = linalg::range_basis(&self.cons_a.transpose());
        let ind = ConvexFunction::indicator_affine(w.transpose(), w.transpose() * x0)?;
        ConvexFunction::sum(vec![quad, ind])
    }
}

fn check_coords(n: usize, coords: &[usize]) -> Result<()> {
    for (k, &c) in coords.iter().enumerate() {
        if c >= n || coords[..k].contains(&c) {
            return Err(Error::InvalidArgument(format!("invalid coordinate list {coords:?} for dimension {n}")));
        }
    }
    Ok(())
}

pub(super) fn normalize(f: &ConvexFunction) -> Option<QuadraticForm> {
    match f.node() {
        Node::QuadraticAffine { q, a, c } => Some(QuadraticForm::new(q.clone(), a.clone(), *c)),
        Node::Zero(n) => Some(QuadraticForm::zero(*n)),
        Node::IndicatorAffine { a, b } => Some(QuadraticForm::constraint(a.clone(), b.clone())),
        Node::WeightedL1 { w } => w.iter().all(|&v| v == 0.0).then(|| QuadraticForm::zero(w.len())),
        Node::IndicatorBox { lo, hi } => {
            let n = lo.len();
            let mut rows = Vec::new();
            let mut vals = Vec::new();
            for i in 0..n {
                if lo[i] == hi[i] {
                    let mut r = vec![0.0; n];
                    r[i] = 1.0;
                    rows.push(r);
                    vals.push(lo[i]);
                } else if lo[i].is_finite() || hi[i].is_finite() {
                    return None;
                }
            }
            Some(QuadraticForm::constraint(linalg::from_rows(&rows, n), Vector::from_vec(vals)))
        }
        Node::Sum(cs) => {
            let mut acc = normalize(&cs[0])?;
            for c in &cs[1..] {
                acc = acc.add(&normalize(c)?).ok()?;
            }
            Some(acc)
        }
        Node::SeparableSum(bs) => {
            let forms: Option<Vec<QuadraticForm>> = bs.iter().map(normalize).collect();
            Some(QuadraticForm::block_diag(&forms?))
        }
        Node::AffinePrecompose { inner, l, shift } => Some(normalize(inner)?.compose_affine(l, shift)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, v)
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn partial_conjugate_of_separable_quadratic() {
        let f = QuadraticForm::new(Mat::identity(2, 2), v(&[0.0, 0.0]), 0.0);
        let g = f.partial_conjugate(&[0]).unwrap();
        assert!((g.q - m(2, 2, &[1.0, 0.0, 0.0, -1.0])).norm() < 1e-12);
        assert!(g.a.norm() < 1e-12 && g.c.abs() < 1e-12);
    }

    #[test]
    fn partial_conjugate_of_bilinear_form_adds_range_condition() {
        let f = QuadraticForm::new(m(2, 2, &[0.0, 1.0, 1.0, 0.0]), v(&[0.0, 0.0]), 0.0);
        let g = f.partial_conjugate(&[0]).unwrap();
        assert!(g.eval(&v(&[2.0, 2.0])).is_finite());
        assert!(!g.eval(&v(&[1.0, 2.0])).is_finite());
        assert!(g.value_unconstrained(&v(&[2.0, 2.0])).abs() < 1e-12);
    }

    #[test]
    fn full_conjugate_of_positive_definite_quadratic() {
        let q = m(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let a = v(&[1.0, -1.0]);
        let f = QuadraticForm::new(q.clone(), a.clone(), 0.5);
        let g = f.partial_conjugate(&[0, 1]).unwrap();
        let qi = q.try_inverse().unwrap();
        let y = v(&[0.3, -0.7]);
        let expect = 0.5 * (&y - &a).dot(&(&qi * (&y - &a))) - 0.5;
        assert!((g.value_unconstrained(&y) - expect).abs() < 1e-12);
    }

    #[test]
    fn conjugating_concave_direction_is_rejected() {
        let f = QuadraticForm::new(m(1, 1, &[-1.0]), v(&[0.0]), 0.0);
        assert!(matches!(f.partial_conjugate(&[0]), Err(Error::UnsupportedConjugate(_))));
    }

    #[test]
    fn eliminate_saddle_reports_indefinite() {
        let f = QuadraticForm::new(m(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0]), v(&[0.0, 1.0, 1.0]), 0.0);
        let el = f.eliminate(&[1, 2]).unwrap();
        assert_eq!(el.curvature, Curvature::Indefinite);
        assert!((el.form.c - 0.0).abs() < 1e-12);
        let z = &el.recover.0 * v(&[0.0]) + &el.recover.1;
        assert!((z - v(&[-1.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn eliminate_under_constraints() {
        // min over y of ½(x² + y²) subject to x + y = 1 gives ½x² + ½(1 − x)².
        let f = QuadraticForm::new(Mat::identity(2, 2), v(&[0.0, 0.0]), 0.0).with_constraint(&m(1, 2, &[1.0, 1.0]), &v(&[1.0]));
        let el = f.eliminate(&[1]).unwrap();
        assert!(!el.form.is_constrained() || el.form.cons_a.norm() < 1e-12);
        for x in [-1.0, 0.0, 0.5, 2.0] {
            let expect = 0.5 * x * x + 0.5 * (1.0 - x) * (1.0 - x);
            assert!((el.form.value_unconstrained(&v(&[x])) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn to_convex_projects_onto_constraint() {
        let f = QuadraticForm::new(m(2, 2, &[1.0, 0.0, 0.0, -1.0]), v(&[0.0, 0.0]), 0.0)
            .with_constraint(&m(1, 2, &[0.0, 1.0]), &v(&[0.0]));
        let g = f.to_convex().unwrap();
        assert_eq!(g.eval(&v(&[2.0, 0.0])).unwrap(), ExtendedReal::Finite(2.0));
        assert_eq!(g.eval(&v(&[2.0, 1.0])).unwrap(), ExtendedReal::PosInf);
    }
}
