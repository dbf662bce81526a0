use super::{quadform, sep, ConvexFunction, Node};
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};

impl ConvexFunction {
    /// The Fenchel conjugate φ*(y) = sup_x ⟨y, x⟩ − φ(x).
    ///
    /// Exact rules cover quadratics with affine constraints, separable
    /// piecewise-linear terms with interval or kink structure, separable sums
    /// and affine precomposition with a surjective map.
    pub fn conjugate(&self) -> Result<ConvexFunction> {
        if let Some(qf) = quadform::normalize(self) {
            let all: Vec<usize> = (0..qf.dim()).collect();
            let g = qf.partial_conjugate(&all)?;
            return g.to_convex();
        }
        if let Some(s) = sep::normalize(self) {
            if let Some(g) = sep::conjugate(&s) {
                return Ok(g);
            }
        }
        match self.node() {
            Node::SeparableSum(bs) => {
                let parts: Result<Vec<ConvexFunction>> = bs.iter().map(|b| b.conjugate()).collect();
                ConvexFunction::separable_sum(parts?)
            }
            Node::AffinePrecompose { inner, l, shift } => {
                let m = l.nrows();
                if linalg::rank(l) < m {
                    return Err(Error::UnsupportedConjugate("precomposition with a non-surjective map".into()));
                }
                let gstar = inner.conjugate()?;
                let lin = ConvexFunction::linear(-shift.clone(), 0.0)?;
                let shifted = ConvexFunction::sum(vec![gstar, lin])?;
                let llt = l * l.transpose();
                let inv = llt.try_inverse().ok_or_else(|| Error::UnsupportedConjugate("L Lᵀ is singular".into()))?;
                let main = ConvexFunction::affine_precompose(shifted, inv * l, Vector::zeros(m))?;
                let ker = linalg::null_space(l);
                if ker.ncols() == 0 {
                    return Ok(main);
                }
                let ind = ConvexFunction::indicator_affine(ker.transpose(), Vector::zeros(ker.ncols()))?;
                ConvexFunction::sum(vec![main, ind])
            }
            _ => Err(Error::UnsupportedConjugate("no rule for this node".into())),
        }
    }

    /// Partial conjugate in the listed coordinates, for trees with a
    /// quadratic normal form.
    pub fn partial_conjugate(&self, coords: &[usize]) -> Result<quadform::QuadraticForm> {
        let qf = quadform::normalize(self)
            .ok_or_else(|| Error::UnsupportedConjugate("partial conjugation needs a quadratic form".into()))?;
        qf.partial_conjugate(coords)
    }
}
