use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{LinearRelation, MonotoneRelation, Orientation, RelationKind, SubdiffGraph};
use crate::convexfun::ConvexFunction;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::tol;

/// Default half-width of the sampling box.
pub const SAMPLE_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactLinear,
    ExactRule,
    Sampled,
}

/// Points (f_k, e_k) and the value of the violated sum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub flows: Vec<Vec<f64>>,
    pub efforts: Vec<Vec<f64>>,
    pub value: f64,
}

impl Witness {
    fn new(points: &[(Vector, Vector)], value: f64) -> Self {
        Witness {
            flows: points.iter().map(|p| p.0.iter().copied().collect()).collect(),
            efforts: points.iter().map(|p| p.1.iter().copied().collect()).collect(),
            value,
        }
    }

    pub fn points(&self) -> Vec<(Vector, Vector)> {
        self.flows.iter().zip(&self.efforts).map(|(f, e)| (Vector::from_column_slice(f), Vector::from_column_slice(e))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub verdict: Verdict,
    pub method: Method,
    pub witness: Option<Witness>,
    pub samples: usize,
}

impl CheckReport {
    fn holds(method: Method) -> Self {
        CheckReport { verdict: Verdict::Holds, method, witness: None, samples: 0 }
    }

    fn violated(method: Method, points: &[(Vector, Vector)], value: f64, samples: usize) -> Self {
        CheckReport { verdict: Verdict::Violated, method, witness: Some(Witness::new(points, value)), samples }
    }
}

/// Σₖ ⟨eₖ, fₖ − fₖ₊₁⟩ over a closed chain (indices mod m + 1).
pub fn cyclic_sum(points: &[(Vector, Vector)]) -> f64 {
    let m = points.len();
    (0..m).map(|k| points[k].1.dot(&(&points[k].0 - &points[(k + 1) % m].0))).sum()
}

fn pair_defect(p: &(Vector, Vector), q: &(Vector, Vector)) -> f64 {
    (&p.1 - &q.1).dot(&(&p.0 - &q.0))
}

/// ⟨e, f⟩ on [f; e] as a symmetric form.
fn power_form(n: usize) -> Mat {
    let mut w = Mat::zeros(2 * n, 2 * n);
    for i in 0..n {
        w[(i, n + i)] = 0.5;
        w[(n + i, i)] = 0.5;
    }
    w
}

fn split(z: &Vector, n: usize) -> (Vector, Vector) {
    (z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
}

fn check_linear_monotone(l: &LinearRelation) -> CheckReport {
    let n = l.dim();
    let z = l.basis();
    let m = z.transpose() * power_form(n) * &z;
    let (vals, vecs) = linalg::sym_eigen(&m);
    if vals.is_empty() || vals[0] >= -tol::DEFECT {
        return CheckReport::holds(Method::ExactLinear);
    }
    let p = split(&(&z * vecs.column(0)), n);
    let q = (Vector::zeros(n), Vector::zeros(n));
    let value = pair_defect(&p, &q);
    CheckReport::violated(Method::ExactLinear, &[p, q], value, 0)
}

fn field_is_rule_monotone(skew: &Mat) -> bool {
    linalg::min_eig(&linalg::sym(skew)) >= -tol::DEFECT
}

/// Monotonicity ⟨e₁ − e₂, f₁ − f₂⟩ ≥ 0: exact for linear, skew, subdifferential,
/// convex-generator and curve-free field relations, sampled otherwise.
pub fn check_monotone(m: &MonotoneRelation, n_samples: usize, seed: u64) -> CheckReport {
    match &m.kind {
        RelationKind::Linear(l) => check_linear_monotone(l),
        RelationKind::Skew(_) | RelationKind::Subdiff(_) => CheckReport::holds(Method::ExactRule),
        RelationKind::Field(f) if f.curves.is_empty() && field_is_rule_monotone(&f.skew) => CheckReport::holds(Method::ExactRule),
        RelationKind::Generator(k) => match k.affine_param() {
            Ok((x0, nb)) => {
                let (vals, vecs) = linalg::sym_eigen(&(nb.transpose() * &k.q * &nb));
                if vals.is_empty() || vals[0] >= -tol::DEFECT * linalg::max_abs(&k.q).max(1.0) {
                    return CheckReport::holds(Method::ExactRule);
                }
                let e2 = &x0 + &nb * vecs.column(0);
                let p = (k.gradient(&x0), x0);
                let q = (k.gradient(&e2), e2);
                let value = pair_defect(&p, &q);
                CheckReport::violated(Method::ExactRule, &[p, q], value, 0)
            }
            Err(_) => CheckReport::holds(Method::ExactRule),
        },
        RelationKind::Product(parts) => {
            let reports: Vec<CheckReport> =
                parts.iter().enumerate().map(|(i, p)| check_monotone(p, n_samples, seed.wrapping_add(i as u64))).collect();
            combine_product(m, parts, reports, n_samples, seed)
        }
        _ => sampled_monotone(m, n_samples, seed),
    }
}

fn sampled_monotone(m: &MonotoneRelation, n_samples: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.dim();
    let mut pts: Vec<(Vector, Vector)> = Vec::with_capacity(n_samples);
    let mut params: Vec<Vector> = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let v = Vector::from_fn(2 * n, |_, _| rng.random_range(-SAMPLE_RADIUS..=SAMPLE_RADIUS));
        match m.point_from(&v) {
            Some(p) => {
                pts.push(p);
                params.push(v);
            }
            None => return CheckReport { verdict: Verdict::Inconclusive, method: Method::Sampled, witness: None, samples: 0 },
        }
    }
    type Pair = (Vector, Vector);
    let mut best: Option<(f64, Pair, Pair)> = None;
    let mut consider = |p: &(Vector, Vector), q: &(Vector, Vector)| {
        let d = pair_defect(p, q);
        if d < -tol::DEFECT && best.as_ref().is_none_or(|b| d < b.0) {
            best = Some((d, p.clone(), q.clone()));
        }
    };
    for i in 0..pts.len() {
        let j = rng.random_range(0..pts.len());
        consider(&pts[i], &pts[j]);
        let scale = rng.random_range(1e-3..1.0) * SAMPLE_RADIUS * 1e-2;
        let dir = Vector::from_fn(2 * n, |_, _| rng.random_range(-1.0..=1.0));
        if let Some(q) = m.point_from(&(&params[i] + dir * scale)) {
            consider(&pts[i], &q);
        }
    }
    if n == 1 {
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.sort_by(|&a, &b| pts[a].0[0].total_cmp(&pts[b].0[0]));
        for w in order.windows(2) {
            consider(&pts[w[0]], &pts[w[1]]);
        }
    }
    match best {
        Some((d, p, q)) => CheckReport::violated(Method::Sampled, &[p, q], d, n_samples),
        None => CheckReport { verdict: Verdict::Inconclusive, method: Method::Sampled, witness: None, samples: n_samples },
    }
}

/// Lifts a part's witness to the product by padding the other parts with one
/// fixed point, which cancels in every difference.
fn combine_product(
    m: &MonotoneRelation,
    parts: &[MonotoneRelation],
    reports: Vec<CheckReport>,
    n_samples: usize,
    seed: u64,
) -> CheckReport {
    let samples = reports.iter().map(|r| r.samples).sum();
    if let Some(k) = reports.iter().position(|r| r.verdict == Verdict::Violated) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors: Option<Vec<(Vector, Vector)>> = parts.iter().map(|p| p.sample(&mut rng, 1.0)).collect();
        if let (Some(anchors), Some(w)) = (anchors, reports[k].witness.as_ref()) {
            let n = m.dim();
            let lifted: Vec<(Vector, Vector)> = w
                .points()
                .into_iter()
                .map(|(pf, pe)| {
                    let mut f = Vector::zeros(n);
                    let mut e = Vector::zeros(n);
                    let mut off = 0;
                    for (i, part) in parts.iter().enumerate() {
                        let d = part.dim();
                        let (sf, se) = if i == k { (&pf, &pe) } else { (&anchors[i].0, &anchors[i].1) };
                        f.rows_mut(off, d).copy_from(sf);
                        e.rows_mut(off, d).copy_from(se);
                        off += d;
                    }
                    (f, e)
                })
                .collect();
            let value = if lifted.len() == 2 { pair_defect(&lifted[0], &lifted[1]) } else { cyclic_sum(&lifted) };
            return CheckReport::violated(reports[k].method, &lifted, value, samples);
        }
        return CheckReport { samples, ..reports[k].clone() };
    }
    let _ = n_samples;
    if reports.iter().all(|r| r.verdict == Verdict::Holds) {
        let method = if reports.iter().any(|r| r.method == Method::ExactRule) { Method::ExactRule } else { Method::ExactLinear };
        return CheckReport { samples, ..CheckReport::holds(method) };
    }
    CheckReport { verdict: Verdict::Inconclusive, method: Method::Sampled, witness: None, samples }
}

/// 3-cycle e = (a, b, −a) through f = J e with cyclic sum −2⟨a, J b⟩ < 0.
fn skew_witness(j: &Mat) -> Option<(Vec<(Vector, Vector)>, f64)> {
    let n = j.nrows();
    let mut best = (0.0, 0, 0);
    for r in 0..n {
        for c in 0..n {
            if j[(r, c)] > best.0 {
                best = (j[(r, c)], r, c);
            }
        }
    }
    if best.0 <= tol::SKEW {
        return None;
    }
    let mut a = Vector::zeros(n);
    let mut b = Vector::zeros(n);
    a[best.1] = 1.0;
    b[best.2] = 1.0;
    let pts: Vec<(Vector, Vector)> = [a.clone(), b, -a].into_iter().map(|e| (j * &e, e)).collect();
    let s = cyclic_sum(&pts);
    Some((pts, s))
}

/// Regular m-gon in the plane of two relation basis vectors, oriented so the
/// circulation term is negative; finds a cycle for every non-symmetric
/// monotone linear relation given enough vertices.
fn linear_cycle_witness(l: &LinearRelation, max_cycle: usize) -> Option<(Vec<(Vector, Vector)>, f64)> {
    let n = l.dim();
    let z = l.basis();
    let zf = z.rows(0, n);
    let ze = z.rows(n, n);
    let a = ze.transpose() * zf;
    let skew = &a - a.transpose();
    let d = z.ncols();
    let mut best = (0.0, 0, 0);
    for r in 0..d {
        for c in 0..d {
            if skew[(r, c)] > best.0 {
                best = (skew[(r, c)], r, c);
            }
        }
    }
    if best.0 <= tol::DEFECT {
        return None;
    }
    // ⟨e_u, f_v⟩ − ⟨e_v, f_u⟩ = skew[u, v] > 0 for u = best.1, v = best.2.
    let u = z.column(best.1).into_owned();
    let v = z.column(best.2).into_owned();
    let mut m = 3;
    while m <= max_cycle.max(3) {
        let pts: Vec<(Vector, Vector)> = (0..m)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                split(&(&u * th.cos() + &v * th.sin()), n)
            })
            .collect();
        let s = cyclic_sum(&pts);
        if s < -tol::DEFECT {
            return Some((pts, s));
        }
        m = if m < 8 { m + 1 } else { m * 2 };
    }
    None
}

/// Cyclic monotonicity over chains of length up to `max_cycle`.
pub fn check_cyclic(m: &MonotoneRelation, max_cycle: usize, n_trials: usize, seed: u64) -> CheckReport {
    let max_cycle = max_cycle.max(2);
    match &m.kind {
        RelationKind::Subdiff(_) => CheckReport::holds(Method::ExactRule),
        RelationKind::Skew(j) => match skew_witness(j) {
            Some((pts, s)) => CheckReport::violated(Method::ExactRule, &pts, s, 0),
            None => CheckReport::holds(Method::ExactRule),
        },
        RelationKind::Linear(l) => {
            let mono = check_linear_monotone(l);
            if mono.verdict == Verdict::Violated {
                return mono;
            }
            match linear_cycle_witness(l, max_cycle.max(64)) {
                Some((pts, s)) => CheckReport::violated(Method::ExactLinear, &pts, s, 0),
                None => CheckReport::holds(Method::ExactLinear),
            }
        }
        RelationKind::Generator(_) => {
            let mono = check_monotone(m, n_trials, seed);
            if mono.verdict == Verdict::Violated {
                mono
            } else {
                CheckReport::holds(Method::ExactRule)
            }
        }
        RelationKind::Field(f) if f.curves.is_empty() && linalg::max_abs(&(&f.skew - f.skew.transpose())) <= tol::SKEW => {
            if field_is_rule_monotone(&f.skew) {
                CheckReport::holds(Method::ExactRule)
            } else {
                sampled_cyclic(m, max_cycle, n_trials, seed)
            }
        }
        RelationKind::Field(f) if f.phi.is_none() && f.curves.is_empty() => {
            let l = m.as_linear().expect("linear field");
            let _ = f;
            check_cyclic(&MonotoneRelation { kind: RelationKind::Linear(l), ..m.clone() }, max_cycle, n_trials, seed)
        }
        RelationKind::Product(parts) => {
            let reports: Vec<CheckReport> = parts
                .iter()
                .enumerate()
                .map(|(i, p)| check_cyclic(p, max_cycle, n_trials, seed.wrapping_add(i as u64)))
                .collect();
            combine_product(m, parts, reports, n_trials, seed)
        }
        _ => sampled_cyclic(m, max_cycle, n_trials, seed),
    }
}

fn sampled_cyclic(m: &MonotoneRelation, max_cycle: usize, n_trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.dim();
    let mut best: Option<(f64, Vec<(Vector, Vector)>)> = None;
    for t in 0..n_trials {
        let len = rng.random_range(2..=max_cycle);
        let base = Vector::from_fn(2 * n, |_, _| rng.random_range(-SAMPLE_RADIUS..=SAMPLE_RADIUS));
        let params: Vec<Vector> = if t % 2 == 0 {
            (0..len).map(|_| Vector::from_fn(2 * n, |_, _| rng.random_range(-SAMPLE_RADIUS..=SAMPLE_RADIUS))).collect()
        } else {
            let u = Vector::from_fn(2 * n, |_, _| rng.random_range(-1.0..=1.0));
            let w = Vector::from_fn(2 * n, |_, _| rng.random_range(-1.0..=1.0));
            let rho = rng.random_range(1e-2..1.0) * SAMPLE_RADIUS * 0.1;
            (0..len)
                .map(|k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / len as f64;
                    &base + (&u * th.cos() + &w * th.sin()) * rho
                })
                .collect()
        };
        let pts: Option<Vec<(Vector, Vector)>> = params.iter().map(|p| m.point_from(p)).collect();
        let Some(pts) = pts else {
            return CheckReport { verdict: Verdict::Inconclusive, method: Method::Sampled, witness: None, samples: t };
        };
        let s = cyclic_sum(&pts);
        if s < -tol::DEFECT && best.as_ref().is_none_or(|b| s < b.0) {
            best = Some((s, pts));
        }
    }
    match best {
        Some((s, pts)) => CheckReport::violated(Method::Sampled, &pts, s, n_trials),
        None => CheckReport { verdict: Verdict::Inconclusive, method: Method::Sampled, witness: None, samples: n_trials },
    }
}

/// Power-conserving and of dimension n.
pub fn is_dirac(l: &LinearRelation) -> bool {
    let n = l.dim();
    if l.subspace_dim() != n {
        return false;
    }
    let z = l.basis();
    linalg::max_abs(&(z.transpose() * power_form(n) * &z)) <= tol::DEFECT
}

/// Basis of K when the relation equals K × K^⊥, `None` otherwise.
pub fn is_separable(l: &LinearRelation) -> Result<Option<Mat>> {
    if !is_dirac(l) {
        return Err(Error::NotDirac);
    }
    let n = l.dim();
    let z = l.basis();
    let zf = z.rows(0, n).into_owned();
    let ze = z.rows(n, n).into_owned();
    if linalg::max_abs(&(ze.transpose() * &zf)) > tol::DEFECT {
        return Ok(None);
    }
    Ok(Some(linalg::range_basis(&zf)))
}

/// R_f R_eᵀ symmetric PSD and rank [R_f R_e] = n.
pub fn is_resistive(r_f: &Mat, r_e: &Mat) -> bool {
    let n = r_f.ncols();
    if r_f.shape() != (n, n) || r_e.shape() != (n, n) {
        return false;
    }
    let p = r_f * r_e.transpose();
    linalg::max_abs(&(&p - p.transpose())) <= tol::DEFECT
        && linalg::min_eig(&linalg::sym(&p)) >= -tol::DEFECT
        && linalg::rank(&linalg::hstack(&[r_f, r_e])) == n
}

/// Generating function ½fᵀRf + ι(im R_eᵀ) of the resistive relation R_f f = R_e e,
/// with R solving R_e R R_eᵀ = R_e R_fᵀ.
pub fn resistive_generator(r_f: &Mat, r_e: &Mat) -> Result<SubdiffGraph> {
    if !is_resistive(r_f, r_e) {
        return Err(Error::InvalidArgument("relation is not resistive".into()));
    }
    let n = r_f.ncols();
    let pe = linalg::pinv(r_e);
    let p = linalg::range_projector(&r_e.transpose());
    let r = &p * linalg::sym(&(&pe * r_e * r_f.transpose() * pe.transpose())) * &p;
    let r = linalg::sym(&r);
    let residual = linalg::max_abs(&(r_e * &r * r_e.transpose() - r_e * r_f.transpose()));
    if residual > 1e-8 {
        return Err(Error::KhatriSolveFailed { residual });
    }
    let quad = ConvexFunction::quadratic(r, Vector::zeros(n), 0.0)?;
    let ker = linalg::null_space(r_e);
    let phi = if ker.ncols() == 0 {
        quad
    } else {
        let ind = ConvexFunction::indicator_affine(ker.transpose(), Vector::zeros(ker.ncols()))?;
        ConvexFunction::sum(vec![quad, ind])?
    };
    Ok(SubdiffGraph::plain(phi, Orientation::Flow))
}
