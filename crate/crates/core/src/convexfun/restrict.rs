//! Partial evaluation, dependency tests and second derivatives of expression trees.

use super::{ConvexFunction, Node};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

fn constant(n: usize, c: f64) -> Result<ConvexFunction> {
    ConvexFunction::quadratic(Mat::zeros(n, n), Vector::zeros(n), c)
}

impl ConvexFunction {
    /// x ↦ φ(x, values): the trailing coordinates are fixed.
    pub fn fix_trailing(&self, values: &Vector) -> Result<ConvexFunction> {
        let dim = self.dim();
        let m = values.len();
        if m > dim {
            return Err(Error::DimensionMismatch { expected: dim, got: m });
        }
        if m == 0 {
            return Ok(self.clone());
        }
        let n = dim - m;
        match self.node() {
            Node::QuadraticAffine { q, a, c } => {
                let qff = q.view((0, 0), (n, n)).into_owned();
                let qfu = q.view((0, n), (n, m)).into_owned();
                let quu = q.view((n, n), (m, m)).into_owned();
                let af = a.rows(0, n).into_owned() + &qfu * values;
                let cc = c + 0.5 * values.dot(&(&quu * values)) + a.rows(n, m).dot(values);
                ConvexFunction::quadratic(qff, af, cc)
            }
            Node::WeightedL1 { w } => {
                let c: f64 = w.rows(n, m).iter().zip(values.iter()).map(|(w, v)| w * v.abs()).sum();
                ConvexFunction::sum(vec![ConvexFunction::weighted_l1(w.rows(0, n).into_owned())?, constant(n, c)?])
            }
            Node::IndicatorAffine { a, b } => {
                let af = a.columns(0, n).into_owned();
                let rhs = b - a.columns(n, m) * values;
                ConvexFunction::indicator_affine(af, rhs)
            }
            Node::IndicatorBox { lo, hi } => {
                let mut residual = 0.0_f64;
                for i in 0..m {
                    let v = values[i];
                    residual = residual.max(lo[n + i] - v).max(v - hi[n + i]);
                }
                if residual > crate::tol::DOMAIN {
                    return Err(Error::InfeasibleConstraint { residual });
                }
                ConvexFunction::indicator_box(lo.rows(0, n).into_owned(), hi.rows(0, n).into_owned())
            }
            Node::Zero(_) => Ok(ConvexFunction::zero(n)),
            Node::Sum(cs) => {
                let parts = cs.iter().map(|c| c.fix_trailing(values)).collect::<Result<Vec<_>>>()?;
                ConvexFunction::sum(parts)
            }
            Node::SeparableSum(bs) => {
                let mut blocks = Vec::new();
                let mut fixed = 0.0;
                let mut off = 0;
                for b in bs {
                    let d = b.dim();
                    if off + d <= n {
                        blocks.push(b.clone());
                    } else if off >= n {
                        let v = values.rows(off - n, d).into_owned();
                        match b.eval(&v)?.finite() {
                            Some(c) => fixed += c,
                            None => return Err(Error::InfeasibleConstraint { residual: f64::INFINITY }),
                        }
                    } else {
                        let k = off + d - n;
                        blocks.push(b.fix_trailing(&values.rows(0, k).into_owned())?);
                    }
                    off += d;
                }
                let head = if blocks.is_empty() { ConvexFunction::zero(n) } else { ConvexFunction::separable_sum(blocks)? };
                if fixed == 0.0 {
                    Ok(head)
                } else {
                    ConvexFunction::sum(vec![head, constant(n, fixed)?])
                }
            }
            Node::AffinePrecompose { inner, l, shift } => {
                let lf = l.columns(0, n).into_owned();
                let s = shift + l.columns(n, m) * values;
                ConvexFunction::affine_precompose(inner.clone(), lf, s)
            }
        }
    }

    /// Conservative structural test: false only if φ provably ignores `coords`.
    pub fn depends_on(&self, coords: &[usize]) -> bool {
        match self.node() {
            Node::QuadraticAffine { q, a, .. } => {
                coords.iter().any(|&i| a[i] != 0.0 || q.row(i).iter().any(|&v| v != 0.0) || q.column(i).iter().any(|&v| v != 0.0))
            }
            Node::WeightedL1 { w } => coords.iter().any(|&i| w[i] != 0.0),
            Node::IndicatorAffine { a, .. } => coords.iter().any(|&i| a.column(i).iter().any(|&v| v != 0.0)),
            Node::IndicatorBox { lo, hi } => coords.iter().any(|&i| lo[i].is_finite() || hi[i].is_finite()),
            Node::Zero(_) => false,
            Node::Sum(cs) => cs.iter().any(|c| c.depends_on(coords)),
            Node::SeparableSum(bs) => {
                let mut off = 0;
                bs.iter().any(|b| {
                    let d = b.dim();
                    let local: Vec<usize> = coords.iter().filter(|&&i| i >= off && i < off + d).map(|&i| i - off).collect();
                    off += d;
                    !local.is_empty() && b.depends_on(&local)
                })
            }
            Node::AffinePrecompose { l, .. } => coords.iter().any(|&i| l.column(i).iter().any(|&v| v != 0.0)),
        }
    }

    /// ∇²φ(x) for smooth trees, `None` when a nonsmooth term is present.
    pub fn hessian(&self, x: &Vector) -> Result<Option<Mat>> {
        self.check_dim(x)?;
        Ok(self.hessian_unchecked(x))
    }

    fn hessian_unchecked(&self, x: &Vector) -> Option<Mat> {
        let n = x.len();
        if !self.is_smooth() {
            return None;
        }
        match self.node() {
            Node::QuadraticAffine { q, .. } => Some(q.clone()),
            Node::WeightedL1 { .. } | Node::IndicatorAffine { .. } | Node::IndicatorBox { .. } | Node::Zero(_) => {
                Some(Mat::zeros(n, n))
            }
            Node::Sum(cs) => cs.iter().try_fold(Mat::zeros(n, n), |acc, c| Some(acc + c.hessian_unchecked(x)?)),
            Node::SeparableSum(bs) => {
                let mut hs = Vec::with_capacity(bs.len());
                let mut off = 0;
                for b in bs {
                    let d = b.dim();
                    hs.push(b.hessian_unchecked(&x.rows(off, d).into_owned())?);
                    off += d;
                }
                let refs: Vec<&Mat> = hs.iter().collect();
                Some(linalg::block_diag(&refs))
            }
            Node::AffinePrecompose { inner, l, shift } => {
                let h = inner.hessian_unchecked(&(l * x + shift))?;
                Some(l.transpose() * h * l)
            }
        }
    }
}
