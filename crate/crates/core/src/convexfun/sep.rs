//! Coordinatewise normal form ½qx² + ax + w|x − m| + ι[lo, hi](x).

use super::{ConvexFunction, Node};
use crate::linalg::{self, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) struct Coord {
    pub q: f64,
    pub a: f64,
    pub w: f64,
    pub m: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Coord {
    fn zero() -> Self {
        Coord { q: 0.0, a: 0.0, w: 0.0, m: 0.0, lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    fn merge(self, o: Coord) -> Option<Coord> {
        let (w, m) = match (self.w > 0.0, o.w > 0.0) {
            (true, true) if self.m != o.m => return None,
            (true, _) => (self.w + o.w, self.m),
            (false, true) => (o.w, o.m),
            (false, false) => (0.0, 0.0),
        };
        let lo = self.lo.max(o.lo);
        let hi = self.hi.min(o.hi);
        if lo > hi {
            return None;
        }
        Some(Coord { q: self.q + o.q, a: self.a + o.a, w, m, lo, hi })
    }

    /// The coordinate form of y ↦ φ(dy + s); returns the added constant too.
    fn reparam(self, d: f64, s: f64) -> (Coord, f64) {
        let (lo, hi) = {
            let l = (self.lo - s) / d;
            let h = (self.hi - s) / d;
            if d > 0.0 {
                (l, h)
            } else {
                (h, l)
            }
        };
        let c = Coord { q: self.q * d * d, a: (self.q * s + self.a) * d, w: self.w * d.abs(), m: (self.m - s) / d, lo, hi };
        (c, 0.5 * self.q * s * s + self.a * s)
    }

    /// argmin_x ½(x − v)² + h·(coordinate term).
    pub fn prox(&self, v: f64, h: f64) -> f64 {
        let den = 1.0 + h * self.q;
        let z = (v - h * self.a) / den - self.m;
        let t = h * self.w / den;
        let soft = z.signum() * (z.abs() - t).max(0.0);
        (self.m + soft).clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(super) struct SepForm {
    pub coords: Vec<Coord>,
    pub c: f64,
}

pub(super) fn normalize(f: &ConvexFunction) -> Option<SepForm> {
    match f.node() {
        Node::QuadraticAffine { q, a, c } => {
            if !linalg::is_diagonal(q) {
                return None;
            }
            let coords = (0..a.len()).map(|i| Coord { q: q[(i, i)], a: a[i], ..Coord::zero() }).collect();
            Some(SepForm { coords, c: *c })
        }
        Node::WeightedL1 { w } => Some(SepForm { coords: w.iter().map(|&w| Coord { w, ..Coord::zero() }).collect(), c: 0.0 }),
        Node::IndicatorBox { lo, hi } => Some(SepForm {
            coords: lo.iter().zip(hi.iter()).map(|(&lo, &hi)| Coord { lo, hi, ..Coord::zero() }).collect(),
            c: 0.0,
        }),
        Node::IndicatorAffine { a, b } => {
            let mut coords = vec![Coord::zero(); a.ncols()];
            for r in 0..a.nrows() {
                let nz: Vec<usize> = (0..a.ncols()).filter(|&j| a[(r, j)] != 0.0).collect();
                match nz.as_slice() {
                    [] => {}
                    [j] => {
                        let val = b[r] / a[(r, *j)];
                        let pin = Coord { lo: val, hi: val, ..Coord::zero() };
                        coords[*j] = coords[*j].merge(pin)?;
                    }
                    _ => return None,
                }
            }
            Some(SepForm { coords, c: 0.0 })
        }
        Node::Zero(n) => Some(SepForm { coords: vec![Coord::zero(); *n], c: 0.0 }),
        Node::Sum(cs) => {
            let mut acc = normalize(&cs[0])?;
            for ch in &cs[1..] {
                let o = normalize(ch)?;
                for (x, y) in acc.coords.iter_mut().zip(o.coords) {
                    *x = x.merge(y)?;
                }
                acc.c += o.c;
            }
            Some(acc)
        }
        Node::SeparableSum(bs) => {
            let mut coords = Vec::new();
            let mut c = 0.0;
            for b in bs {
                let s = normalize(b)?;
                coords.extend(s.coords);
                c += s.c;
            }
            Some(SepForm { coords, c })
        }
        Node::AffinePrecompose { inner, l, shift } => {
            if !linalg::is_diagonal(l) || (0..l.nrows()).any(|i| l[(i, i)] == 0.0) {
                return None;
            }
            let s = normalize(inner)?;
            let mut c = s.c;
            let coords = s
                .coords
                .into_iter()
                .enumerate()
                .map(|(i, co)| {
                    let (nc, k) = co.reparam(l[(i, i)], shift[i]);
                    c += k;
                    nc
                })
                .collect();
            Some(SepForm { coords, c })
        }
    }
}

/// Conjugate of a separable form whose coordinates are each either a pure
/// affine term on an interval or a linear term plus a weighted kink.
pub(super) fn conjugate(s: &SepForm) -> Option<ConvexFunction> {
    let n = s.coords.len();
    let mut lin = Vector::zeros(n);
    let mut quad = Vector::zeros(n);
    let mut w = Vector::zeros(n);
    let mut center = Vector::zeros(n);
    let mut lo = Vector::from_element(n, f64::NEG_INFINITY);
    let mut hi = Vector::from_element(n, f64::INFINITY);
    let mut c = -s.c;
    for (i, co) in s.coords.iter().enumerate() {
        let a = co.a;
        let free = co.lo == f64::NEG_INFINITY && co.hi == f64::INFINITY;
        if co.q > 0.0 {
            if co.w > 0.0 || !free {
                return None;
            }
            quad[i] = 1.0 / co.q;
            lin[i] = -a / co.q;
            c += a * a / (2.0 * co.q);
        } else if co.w == 0.0 {
            match (co.lo.is_finite(), co.hi.is_finite()) {
                (true, true) => {
                    w[i] = 0.5 * (co.hi - co.lo);
                    center[i] = a;
                    lin[i] = 0.5 * (co.hi + co.lo);
                    c -= lin[i] * a;
                }
                (true, false) => {
                    lin[i] = co.lo;
                    c -= co.lo * a;
                    hi[i] = a;
                }
                (false, true) => {
                    lin[i] = co.hi;
                    c -= co.hi * a;
                    lo[i] = a;
                }
                (false, false) => {
                    lo[i] = a;
                    hi[i] = a;
                }
            }
        } else if free {
            lin[i] = co.m;
            c -= a * co.m;
            lo[i] = a - co.w;
            hi[i] = a + co.w;
        } else {
            return None;
        }
    }
    let mut terms = vec![ConvexFunction::quadratic(Mat::from_diagonal(&quad), lin, c).ok()?];
    if w.iter().any(|&x| x > 0.0) {
        let l1 = ConvexFunction::weighted_l1(w).ok()?;
        if center.iter().any(|&x| x != 0.0) {
            terms.push(ConvexFunction::affine_precompose(l1, Mat::identity(n, n), -center).ok()?);
        } else {
            terms.push(l1);
        }
    }
    if lo.iter().chain(hi.iter()).any(|x| x.is_finite()) {
        terms.push(ConvexFunction::indicator_box(lo, hi).ok()?);
    }
    ConvexFunction::sum(terms).ok()
}
