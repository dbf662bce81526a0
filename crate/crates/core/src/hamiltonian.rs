//! Energy functions: quadratic-affine or coordinatewise separable.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::tol;

const NEWTON_MAX_ITER: usize = 200;
const NEWTON_TOL: f64 = 1e-10;

/// One-dimensional convex piece of a separable Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    /// coef · x^p with p even, p ≥ 2.
    EvenPower { coef: f64, p: u32 },
    /// a · exp(b x).
    Exp { a: f64, b: f64 },
    /// ½ q x² + a x.
    Quadratic { q: f64, a: f64 },
}

impl Piece {
    fn check(&self) -> Result<()> {
        let ok = match *self {
            Piece::EvenPower { coef, p } => coef.is_finite() && coef >= 0.0 && p >= 2 && p % 2 == 0,
            Piece::Exp { a, b } => a.is_finite() && b.is_finite() && a >= 0.0,
            Piece::Quadratic { q, a } => q.is_finite() && a.is_finite() && q >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("not a convex piece: {self:?}")))
        }
    }

    fn value(&self, x: f64) -> f64 {
        match *self {
            Piece::EvenPower { coef, p } => coef * x.powi(p as i32),
            Piece::Exp { a, b } => a * (b * x).exp(),
            Piece::Quadratic { q, a } => 0.5 * q * x * x + a * x,
        }
    }

    fn d1(&self, x: f64) -> f64 {
        match *self {
            Piece::EvenPower { coef, p } => coef * p as f64 * x.powi(p as i32 - 1),
            Piece::Exp { a, b } => a * b * (b * x).exp(),
            Piece::Quadratic { q, a } => q * x + a,
        }
    }

    fn d2(&self, x: f64) -> f64 {
        match *self {
            Piece::EvenPower { coef, p } => coef * (p * (p - 1)) as f64 * x.powi(p as i32 - 2),
            Piece::Exp { a, b } => a * b * b * (b * x).exp(),
            Piece::Quadratic { q, .. } => q,
        }
    }

    fn is_strict(&self) -> bool {
        match *self {
            Piece::EvenPower { coef, .. } => coef > 0.0,
            Piece::Exp { a, b } => a > 0.0 && b != 0.0,
            Piece::Quadratic { q, .. } => q > tol::PSD,
        }
    }

    /// Closed-form solution of d1(x) = e when one exists.
    fn invert(&self, e: f64) -> Option<f64> {
        match *self {
            Piece::EvenPower { coef, p } if coef > 0.0 => {
                let r = (e.abs() / (coef * p as f64)).powf(1.0 / (p - 1) as f64);
                Some(r.copysign(e))
            }
            Piece::Exp { a, b } if a > 0.0 && b != 0.0 => {
                let t = e / (a * b);
                (t > 0.0).then(|| t.ln() / b)
            }
            Piece::Quadratic { q, a } if q > 0.0 => Some((e - a) / q),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Hamiltonian {
    /// ½xᵀQx + Ax + c with Q symmetric PSD.
    Quadratic {
        q: Mat,
        a: Vector,
        c: f64,
    },
    Separable(Vec<Piece>),
}

impl Hamiltonian {
    pub fn quadratic(q: Mat, a: Vector, c: f64) -> Result<Self> {
        let n = a.len();
        if q.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, got: q.nrows() });
        }
        if linalg::max_abs(&(&q - q.transpose())) > tol::SYMMETRY * linalg::max_abs(&q).max(1.0) {
            return Err(Error::InvalidArgument("Q must be symmetric".into()));
        }
        let q = linalg::sym(&q);
        let min_eig = linalg::min_eig(&q);
        if min_eig < -tol::PSD * linalg::max_abs(&q).max(1.0) {
            return Err(Error::NotPositiveSemidefinite { min_eig });
        }
        Ok(Hamiltonian::Quadratic { q, a, c })
    }

    /// ½‖x‖².
    pub fn identity(n: usize) -> Self {
        Hamiltonian::Quadratic { q: Mat::identity(n, n), a: Vector::zeros(n), c: 0.0 }
    }

    pub fn separable(pieces: Vec<Piece>) -> Result<Self> {
        for p in &pieces {
            p.check()?;
        }
        Ok(Hamiltonian::Separable(pieces))
    }

    pub fn dim(&self) -> usize {
        match self {
            Hamiltonian::Quadratic { a, .. } => a.len(),
            Hamiltonian::Separable(p) => p.len(),
        }
    }

    pub fn is_strict(&self) -> bool {
        match self {
            Hamiltonian::Quadratic { q, .. } => q.nrows() == 0 || linalg::min_eig(q) > tol::PSD,
            Hamiltonian::Separable(p) => p.iter().all(Piece::is_strict),
        }
    }

    fn check(&self, x: &Vector) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() })
        }
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.check(x)?;
        Ok(match self {
            Hamiltonian::Quadratic { q, a, c } => 0.5 * x.dot(&(q * x)) + a.dot(x) + c,
            Hamiltonian::Separable(p) => p.iter().zip(x.iter()).map(|(p, &v)| p.value(v)).sum(),
        })
    }

    pub fn grad(&self, x: &Vector) -> Result<Vector> {
        self.check(x)?;
        Ok(match self {
            Hamiltonian::Quadratic { q, a, .. } => q * x + a,
            Hamiltonian::Separable(p) => Vector::from_iterator(x.len(), p.iter().zip(x.iter()).map(|(p, &v)| p.d1(v))),
        })
    }

    pub fn hessian(&self, x: &Vector) -> Result<Mat> {
        self.check(x)?;
        Ok(match self {
            Hamiltonian::Quadratic { q, .. } => q.clone(),
            Hamiltonian::Separable(p) => {
                Mat::from_diagonal(&Vector::from_iterator(x.len(), p.iter().zip(x.iter()).map(|(p, &v)| p.d2(v))))
            }
        })
    }

    /// H(x) − ⟨∇H(x̄), x − x̄⟩ − H(x̄).
    pub fn bregman(&self, x: &Vector, xbar: &Vector) -> Result<f64> {
        let g = self.grad(xbar)?;
        Ok(self.value(x)? - g.dot(&(x - xbar)) - self.value(xbar)?)
    }

    /// Solves ∇H(x) = e.
    pub fn grad_inverse(&self, e: &Vector) -> Result<Vector> {
        self.check(e)?;
        match self {
            Hamiltonian::Quadratic { q, a, .. } => {
                let (x, residual) = linalg::lstsq(q, &(e - a));
                if residual > NEWTON_TOL * e.norm().max(1.0) {
                    return Err(Error::NoSolution { x: x.iter().copied().collect(), residual });
                }
                Ok(x)
            }
            Hamiltonian::Separable(pieces) => {
                let mut x = Vector::zeros(e.len());
                let mut worst = 0.0_f64;
                for (i, p) in pieces.iter().enumerate() {
                    let (xi, r) = newton_1d(p, e[i]);
                    x[i] = xi;
                    worst = worst.max(r);
                }
                if worst > NEWTON_TOL * e.amax().max(1.0) {
                    return Err(Error::NoSolution { x: x.iter().copied().collect(), residual: worst });
                }
                Ok(x)
            }
        }
    }
}

/// Damped Newton on d1(x) = e, started from the closed-form guess when available.
fn newton_1d(p: &Piece, e: f64) -> (f64, f64) {
    let mut x = p.invert(e).filter(|v| v.is_finite()).unwrap_or(0.0);
    let mut r = (p.d1(x) - e).abs();
    for _ in 0..NEWTON_MAX_ITER {
        if r <= NEWTON_TOL * e.abs().max(1.0) * 1e-2 {
            break;
        }
        let h = p.d2(x).max(1e-12);
        let step = (p.d1(x) - e) / h;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand = x - t * step;
            let rc = (p.d1(cand) - e).abs();
            if cand.is_finite() && rc < r {
                x = cand;
                r = rc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (x, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn quartic() -> Hamiltonian {
        Hamiltonian::separable(vec![Piece::EvenPower { coef: 0.25, p: 4 }]).unwrap()
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(Hamiltonian::identity(2).grad(&v(&[1.0, -2.0])).unwrap(), v(&[1.0, -2.0]));
        assert_eq!(quartic().grad(&v(&[2.0])).unwrap(), v(&[8.0]));
        let h = Hamiltonian::quadratic(Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]), v(&[1.0, 0.0]), 0.0).unwrap();
        assert_eq!(h.grad(&v(&[1.0, 1.0])).unwrap(), v(&[3.0, 1.0]));
    }

    #[test]
    fn hessian_examples() {
        assert_eq!(quartic().hessian(&v(&[1.0])).unwrap()[(0, 0)], 3.0);
        let h = Hamiltonian::separable(vec![Piece::Exp { a: 1.0, b: 1.0 }]).unwrap();
        assert_eq!(h.hessian(&v(&[0.0])).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn bregman_examples() {
        assert_eq!(quartic().bregman(&v(&[1.0]), &v(&[0.0])).unwrap(), 0.25);
        assert_eq!(quartic().bregman(&v(&[1.3]), &v(&[1.3])).unwrap(), 0.0);
    }

    #[test]
    fn grad_inverse_examples() {
        let h = Hamiltonian::quadratic(Mat::identity(2, 2) * 2.0, v(&[0.0, 0.0]), 0.0).unwrap();
        assert!((h.grad_inverse(&v(&[2.0, 4.0])).unwrap() - v(&[1.0, 2.0])).norm() < 1e-12);
        assert!((quartic().grad_inverse(&v(&[8.0])).unwrap()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_surjective_gradient_has_no_solution() {
        let h = Hamiltonian::separable(vec![Piece::Exp { a: 1.0, b: 1.0 }]).unwrap();
        assert!(matches!(h.grad_inverse(&v(&[-1.0])), Err(Error::NoSolution { .. })));
    }

    #[test]
    fn indefinite_quadratic_is_rejected() {
        let q = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(Hamiltonian::quadratic(q, v(&[0.0, 0.0]), 0.0).is_err());
    }

    fn family() -> Vec<Hamiltonian> {
        vec![
            Hamiltonian::quadratic(Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), v(&[1.0, -1.0]), 0.3).unwrap(),
            Hamiltonian::separable(vec![
                Piece::EvenPower { coef: 0.25, p: 4 },
                Piece::Exp { a: 0.5, b: 0.7 },
                Piece::Quadratic { q: 3.0, a: -1.0 },
            ])
            .unwrap(),
        ]
    }

    fn pad(h: &Hamiltonian, x: &[f64]) -> Vector {
        Vector::from_iterator(h.dim(), x.iter().copied().take(h.dim()))
    }

    proptest! {
        #[test]
        fn grad_matches_finite_differences(x in prop::collection::vec(-2.0..2.0f64, 3)) {
            for h in family() {
                let x = pad(&h, &x);
                let g = h.grad(&x).unwrap();
                let hs = h.hessian(&x).unwrap();
                for i in 0..h.dim() {
                    let mut d = Vector::zeros(h.dim());
                    d[i] = 1e-5;
                    let fd = (h.value(&(&x + &d)).unwrap() - h.value(&(&x - &d)).unwrap()) / 2e-5;
                    prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
                    let gd = (h.grad(&(&x + &d)).unwrap() - h.grad(&(&x - &d)).unwrap()) / 2e-5;
                    for j in 0..h.dim() {
                        prop_assert!((gd[j] - hs[(j, i)]).abs() <= 1e-6 * hs[(j, i)].abs().max(1.0));
                    }
                }
            }
        }

        #[test]
        fn bregman_is_nonnegative(x in prop::collection::vec(-2.0..2.0f64, 3), y in prop::collection::vec(-2.0..2.0f64, 3)) {
            for h in family() {
                let (x, y) = (pad(&h, &x), pad(&h, &y));
                let b = h.bregman(&x, &y).unwrap();
                prop_assert!(b >= -1e-12);
                if h.is_strict() && (&x - &y).norm() > 1e-3 {
                    prop_assert!(b > 0.0);
                }
            }
        }

        #[test]
        fn grad_inverse_round_trip(x in prop::collection::vec(-2.0..2.0f64, 3)) {
            for h in family() {
                let x = pad(&h, &x);
                let back = h.grad_inverse(&h.grad(&x).unwrap()).unwrap();
                prop_assert!((back - x).norm() <= 1e-8);
            }
        }
    }
}
