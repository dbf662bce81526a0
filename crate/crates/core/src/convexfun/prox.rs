use super::{quadform, sep, ConvexFunction, Node};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::tol;

impl ConvexFunction {
    /// prox_{hφ}(v) = argmin_x hφ(x) + ½‖x − v‖².
    ///
    /// Exact for separable and quadratic-with-affine-constraint trees, for
    /// separable sums of those, and for affine precompositions with
    /// LLᵀ = αI. A sum of smooth quadratics and one further term is solved by
    /// forward-backward splitting; anything else is [`Error::UnsupportedProx`].
    pub fn prox(&self, v: &Vector, h: f64) -> Result<Vector> {
        self.check_dim(v)?;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidArgument(format!("prox step must be positive, got {h}")));
        }
        self.prox_inner(v, h)
    }

    fn prox_inner(&self, v: &Vector, h: f64) -> Result<Vector> {
        if let Some(s) = sep::normalize(self) {
            return Ok(Vector::from_iterator(v.len(), s.coords.iter().zip(v.iter()).map(|(c, &x)| c.prox(x, h))));
        }
        if let Some(qf) = quadform::normalize(self) {
            return prox_quadratic(&qf, v, h);
        }
        match self.node() {
            Node::SeparableSum(bs) => {
                let mut out = Vector::zeros(v.len());
                let mut off = 0;
                for b in bs {
                    let n = b.dim();
                    let p = b.prox_inner(&v.rows(off, n).into_owned(), h)?;
                    out.rows_mut(off, n).copy_from(&p);
                    off += n;
                }
                Ok(out)
            }
            Node::AffinePrecompose { inner, l, shift } => {
                let llt = l * l.transpose();
                let alpha = if llt.nrows() == 0 { 0.0 } else { llt[(0, 0)] };
                let target = Mat::identity(llt.nrows(), llt.nrows()) * alpha;
                if alpha <= 0.0 || linalg::max_abs(&(&llt - target)) > 1e-12 * alpha {
                    return Err(Error::UnsupportedProx("affine precomposition with L Lᵀ not a multiple of I".into()));
                }
                let y = l * v + shift;
                let p = inner.prox_inner(&y, alpha * h)?;
                Ok(v + l.transpose() * (p - y) / alpha)
            }
            Node::Sum(cs) => prox_forward_backward(cs, v, h),
            _ => Err(Error::UnsupportedProx("no rule for this node".into())),
        }
    }
}

fn prox_quadratic(qf: &quadform::QuadraticForm, v: &Vector, h: f64) -> Result<Vector> {
    let (x0, nb) = qf.affine_param()?;
    let d = nb.ncols();
    if d == 0 {
        return Ok(x0);
    }
    let m = Mat::identity(d, d) + (nb.transpose() * &qf.q * &nb) * h;
    let rhs = nb.transpose() * (v - &x0) - (nb.transpose() * (&qf.q * &x0 + &qf.a)) * h;
    let z = m
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| m.lu().solve(&rhs))
        .ok_or_else(|| Error::UnsupportedProx("singular proximal system".into()))?;
    Ok(x0 + nb * z)
}

fn prox_forward_backward(cs: &[ConvexFunction], v: &Vector, h: f64) -> Result<Vector> {
    let n = v.len();
    let mut q = Mat::zeros(n, n);
    let mut a = Vector::zeros(n);
    let mut rest = Vec::new();
    for c in cs {
        match quadform::normalize(c) {
            Some(f) if !f.is_constrained() => {
                q += f.q;
                a += f.a;
            }
            _ => rest.push(c.clone()),
        }
    }
    let g = match rest.len() {
        0 => return prox_quadratic(&quadform::QuadraticForm::new(q, a, 0.0), v, h),
        1 => rest.pop().unwrap(),
        _ => return Err(Error::UnsupportedProx("sum of several nonsmooth terms".into())),
    };
    let lmax = linalg::sym_eigen(&q).0.iter().fold(0.0_f64, |m, x| m.max(*x));
    let gamma = 1.0 / (1.0 + h * lmax);
    let mut x = g.prox_inner(v, h)?;
    let mut residual = f64::INFINITY;
    for _ in 0..tol::PROX_MAX_ITER {
        let grad = &x - v + (&q * &x + &a) * h;
        let next = g.prox_inner(&(&x - grad * gamma), gamma * h)?;
        residual = (&next - &x).norm();
        x = next;
        if residual <= tol::PROX_RESIDUAL {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence { residual, iterations: tol::PROX_MAX_ITER })
}
