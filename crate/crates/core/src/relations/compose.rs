use super::{
    Implicit, LinearRelation, MonotoneRelation, Orientation, PortSpace, RelationKind, SubdiffGraph, Wiring, FLAG_IMPLICIT,
    FLAG_NO_MAXIMALITY, FLAG_STATIONARY,
};
use crate::convexfun::{Curvature, Elimination, QuadraticForm};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::tol;

fn port(m: &MonotoneRelation, name: &str) -> Result<(usize, usize)> {
    m.space.range(name).ok_or_else(|| Error::PortMismatch(format!("no port named {name}")))
}

/// Effort-oriented quadratic generator of a relation, when it has one.
fn effort_form(m: &MonotoneRelation) -> Option<QuadraticForm> {
    match &m.kind {
        RelationKind::Generator(k) => Some(k.clone()),
        RelationKind::Subdiff(g) => {
            let qf = g.unsigned_phi().ok()?.quadratic_form()?;
            match g.orientation {
                Orientation::Effort => Some(qf),
                Orientation::Flow => {
                    let all: Vec<usize> = (0..qf.dim()).collect();
                    qf.partial_conjugate(&all).ok()
                }
            }
        }
        RelationKind::Field(f) if f.curves.is_empty() && linalg::is_zero(&linalg::sym(&f.skew)) => {
            // f = ∇φ(e) + S e with S skew is a gradient only when S = 0.
            if !linalg::is_zero(&f.skew) {
                return None;
            }
            f.phi.as_ref().map_or(Some(QuadraticForm::zero(m.dim())), |p| p.quadratic_form())
        }
        _ => None,
    }
}

fn flow_form(m: &MonotoneRelation) -> Option<QuadraticForm> {
    match &m.kind {
        RelationKind::Subdiff(g) if g.orientation == Orientation::Flow => g.unsigned_phi().ok()?.quadratic_form(),
        _ => None,
    }
}

/// Embedding of the combined coordinates into one side's coordinates:
/// external coordinates first, then the listed shared block.
fn embed(space: &PortSpace, shared: &str, ext_offset: usize, shared_offset: usize, total: usize) -> Mat {
    let n = space.dim();
    let (off, d) = space.range(shared).expect("shared port");
    let mut l = Mat::zeros(n, total);
    let mut k = 0;
    for i in 0..n {
        if i >= off && i < off + d {
            l[(i, shared_offset + (i - off))] = 1.0;
        } else {
            l[(i, ext_offset + k)] = 1.0;
            k += 1;
        }
    }
    l
}

/// Relation generated by an effort- or flow-oriented quadratic form.
fn relation_from_form(space: PortSpace, form: QuadraticForm, orientation: Orientation) -> Result<MonotoneRelation> {
    match form.to_convex() {
        Ok(phi) => MonotoneRelation::subdiff(space, SubdiffGraph::plain(phi, orientation)),
        Err(_) if orientation == Orientation::Effort => MonotoneRelation::generator(space, form),
        Err(e) => Err(e),
    }
}

/// Rows of the range condition that are not implied by feasibility.
fn range_restricts(el: &Elimination) -> bool {
    let feas_rows = el.form.cons_a.nrows() - el.range_a.nrows();
    let feas_a = el.form.cons_a.rows(0, feas_rows).into_owned();
    let r0 = linalg::rank(&feas_a);
    let r1 = linalg::rank(&el.form.cons_a);
    let aug = linalg::hstack(&[&el.form.cons_a, &Mat::from_column_slice(el.form.cons_b.len(), 1, el.form.cons_b.as_slice())]);
    r1 > r0 || linalg::rank(&aug) > r1
}

fn unbounded_direction(el: &Elimination) -> Vec<f64> {
    let o = if el.range_b.amax() > tol::DOMAIN {
        Vector::zeros(el.range_a.ncols())
    } else {
        el.range_a.row(0).transpose().into_owned()
    };
    let slope = &el.range_a * &o - &el.range_b;
    let d = -(&el.flat * slope);
    let nrm = d.norm();
    if nrm > 0.0 {
        (d / nrm).iter().copied().collect()
    } else {
        d.iter().copied().collect()
    }
}

/// Power-conserving composition through `shared` with f_a = −f_b, e_a = e_b.
pub fn compose(ma: &MonotoneRelation, mb: &MonotoneRelation, shared: &str) -> Result<MonotoneRelation> {
    let (_, da) = port(ma, shared)?;
    let (_, db) = port(mb, shared)?;
    if da != db {
        return Err(Error::PortMismatch(format!("port {shared} has dimensions {da} and {db}")));
    }
    let space = ma.space.without(shared).concat(&mb.space.without(shared))?;
    let (na, nb) = (ma.dim() - da, mb.dim() - db);
    let n = na + nb;

    if let (Some(la), Some(lb)) = (ma.as_linear(), mb.as_linear()) {
        let rel = compose_linear(ma, &la, mb, &lb, shared, n, da);
        return MonotoneRelation::linear(space, rel);
    }

    let total = n + da;
    let ea = embed(&ma.space, shared, 0, n, total);
    let eb = embed(&mb.space, shared, na, n, total);
    let inner: Vec<usize> = (n..total).collect();

    if let (Some(fa), Some(fb)) = (flow_form(ma), flow_form(mb)) {
        // inf over the shared flow f of φ_a(f_a, f) + φ_b(f_b, −f).
        let mut flip = Mat::identity(total, total);
        for i in n..total {
            flip[(i, i)] = -1.0;
        }
        let combined = fa
            .compose_affine(&ea, &Vector::zeros(ea.nrows()))
            .add(&fb.compose_affine(&(&eb * flip), &Vector::zeros(eb.nrows())))?;
        let el = combined.eliminate(&inner)?;
        if range_restricts(&el) {
            return Err(Error::UnboundedInnerProblem { direction: unbounded_direction(&el) });
        }
        return relation_from_form(space, el.form, Orientation::Flow);
    }

    if let (Some(ka), Some(kb)) = (effort_form(ma), effort_form(mb)) {
        let combined =
            ka.compose_affine(&ea, &Vector::zeros(ea.nrows())).add(&kb.compose_affine(&eb, &Vector::zeros(eb.nrows())))?;
        let el = combined.eliminate(&inner)?;
        if el.curvature == Curvature::PositiveSemidefinite && range_restricts(&el) {
            return Err(Error::UnboundedInnerProblem { direction: unbounded_direction(&el) });
        }
        let rel = relation_from_form(space, el.form, Orientation::Effort)?;
        return Ok(if el.curvature == Curvature::PositiveSemidefinite { rel } else { rel.with_flag(FLAG_STATIONARY) });
    }

    Ok(MonotoneRelation {
        space,
        kind: RelationKind::Implicit(Implicit {
            a: Box::new(ma.clone()),
            b: Box::new(mb.clone()),
            port_a: shared.to_string(),
            port_b: shared.to_string(),
            wiring: Wiring::Canonical,
        }),
        flags: vec![],
    }
    .with_flag(FLAG_IMPLICIT)
    .with_flag(FLAG_NO_MAXIMALITY))
}

fn compose_linear(
    ma: &MonotoneRelation,
    la: &LinearRelation,
    mb: &MonotoneRelation,
    lb: &LinearRelation,
    shared: &str,
    n: usize,
    d: usize,
) -> LinearRelation {
    // Variables: (f_ext [n], e_ext [n], f_s [d], e_s [d]).
    let na = ma.dim() - d;
    let total = 2 * n + 2 * d;
    let side = |m: &MonotoneRelation, l: &LinearRelation, ext_off: usize, flow_sign: f64| -> Mat {
        let (off, _) = m.space.range(shared).expect("shared port");
        let k = l.k_f.nrows();
        let mut rows = Mat::zeros(k, total);
        let mut j = 0;
        for i in 0..m.dim() {
            if i >= off && i < off + d {
                let s = i - off;
                for r in 0..k {
                    rows[(r, 2 * n + s)] += flow_sign * l.k_f[(r, i)];
                    rows[(r, 2 * n + d + s)] += l.k_e[(r, i)];
                }
            } else {
                for r in 0..k {
                    rows[(r, ext_off + j)] += l.k_f[(r, i)];
                    rows[(r, n + ext_off + j)] += l.k_e[(r, i)];
                }
                j += 1;
            }
        }
        rows
    };
    let stacked = linalg::vstack(&[&side(ma, la, 0, 1.0), &side(mb, lb, na, -1.0)]);
    let z = linalg::null_space(&stacked);
    let ext = z.rows(0, 2 * n).into_owned();
    LinearRelation::from_span(&linalg::range_basis(&ext), n)
}

/// Result of a feedback interconnection.
#[derive(Debug, Clone)]
pub struct FeedbackComposition {
    pub relation: MonotoneRelation,
    /// Effort-oriented generator of the closed loop, when computed in closed form.
    pub generator: Option<QuadraticForm>,
    /// Sign structure of the eliminated (e₂, e₃) block.
    pub curvature: Option<Curvature>,
}

/// Interconnection e₂ = f₃, e₃ = f₂ of `port_a` of `ma` with `port_b` of
/// `mb`. For quadratic generators g(e₁, e₂), h(e₃, e₄) the closed loop is
/// generated by the stationary value over (e₂, e₃) of g + h − e₂ᵀe₃, which is
/// the infimum when that block is positive semidefinite.
pub fn compose_feedback(ma: &MonotoneRelation, port_a: &str, mb: &MonotoneRelation, port_b: &str) -> Result<FeedbackComposition> {
    let (_, da) = port(ma, port_a)?;
    let (_, db) = port(mb, port_b)?;
    if da != db {
        return Err(Error::PortMismatch(format!("ports {port_a} and {port_b} have dimensions {da} and {db}")));
    }
    let space = ma.space.without(port_a).concat(&mb.space.without(port_b))?;
    let (na, nb) = (ma.dim() - da, mb.dim() - db);
    let n = na + nb;
    let total = n + 2 * da;

    if let (Some(g), Some(h)) = (effort_form(ma), effort_form(mb)) {
        let ea = embed(&ma.space, port_a, 0, n, total);
        let eb = embed(&mb.space, port_b, na, n + da, total);
        let mut combined =
            g.compose_affine(&ea, &Vector::zeros(ea.nrows())).add(&h.compose_affine(&eb, &Vector::zeros(eb.nrows())))?;
        for i in 0..da {
            combined.q[(n + i, n + da + i)] -= 1.0;
            combined.q[(n + da + i, n + i)] -= 1.0;
        }
        let inner: Vec<usize> = (n..total).collect();
        let el = combined.eliminate(&inner)?;
        let psd = el.curvature == Curvature::PositiveSemidefinite;
        if range_restricts(&el) {
            if psd {
                return Err(Error::UnboundedInnerProblem { direction: unbounded_direction(&el) });
            }
            el.form.affine_param()?;
        }
        let rel = relation_from_form(space, el.form.clone(), Orientation::Effort)?;
        let rel = if psd { rel } else { rel.with_flag(FLAG_STATIONARY) };
        return Ok(FeedbackComposition { relation: rel, generator: Some(el.form), curvature: Some(el.curvature) });
    }

    let rel = MonotoneRelation {
        space,
        kind: RelationKind::Implicit(Implicit {
            a: Box::new(ma.clone()),
            b: Box::new(mb.clone()),
            port_a: port_a.to_string(),
            port_b: port_b.to_string(),
            wiring: Wiring::Feedback,
        }),
        flags: vec![],
    }
    .with_flag(FLAG_IMPLICIT)
    .with_flag(FLAG_NO_MAXIMALITY);
    Ok(FeedbackComposition { relation: rel, generator: None, curvature: None })
}

/// Splits an external point into the two sides and inserts shared variables.
fn side_point(m: &MonotoneRelation, port: &str, ext_f: &[f64], ext_e: &[f64], sf: &[f64], se: &[f64]) -> (Vector, Vector) {
    let n = m.dim();
    let (off, d) = m.space.range(port).expect("port");
    let mut f = Vector::zeros(n);
    let mut e = Vector::zeros(n);
    let mut j = 0;
    for i in 0..n {
        if i >= off && i < off + d {
            f[i] = sf[i - off];
            e[i] = se[i - off];
        } else {
            f[i] = ext_f[j];
            e[i] = ext_e[j];
            j += 1;
        }
    }
    (f, e)
}

pub(super) fn implicit_residual(m: &MonotoneRelation, imp: &Implicit, f: &Vector, e: &Vector) -> f64 {
    let (_, d) = imp.a.space.range(&imp.port_a).expect("port");
    let na = imp.a.dim() - d;
    let _ = m;
    let objective = |s: &Vector| -> f64 {
        let (x, y) = (s.rows(0, d).into_owned(), s.rows(d, d).into_owned());
        let (pa, pb) = match imp.wiring {
            Wiring::Canonical => (
                side_point(&imp.a, &imp.port_a, &f.as_slice()[..na], &e.as_slice()[..na], x.as_slice(), y.as_slice()),
                side_point(&imp.b, &imp.port_b, &f.as_slice()[na..], &e.as_slice()[na..], (-&x).as_slice(), y.as_slice()),
            ),
            Wiring::Feedback => (
                side_point(&imp.a, &imp.port_a, &f.as_slice()[..na], &e.as_slice()[..na], y.as_slice(), x.as_slice()),
                side_point(&imp.b, &imp.port_b, &f.as_slice()[na..], &e.as_slice()[na..], x.as_slice(), y.as_slice()),
            ),
        };
        let ra = imp.a.residual(&pa.0, &pa.1);
        let rb = imp.b.residual(&pb.0, &pb.1);
        (ra * ra + rb * rb).sqrt()
    };
    nelder_mead(&objective, Vector::zeros(2 * d), 1.0, 20_000, 1e-13)
}

/// Derivative-free minimization; returns the best value found.
fn nelder_mead(fun: &dyn Fn(&Vector) -> f64, x0: Vector, scale: f64, max_iter: usize, ftol: f64) -> f64 {
    let n = x0.len();
    if n == 0 {
        return fun(&x0);
    }
    let mut best = f64::INFINITY;
    let mut start = x0;
    let mut step = scale;
    for _restart in 0..4 {
        let mut simplex: Vec<(Vector, f64)> = (0..=n)
            .map(|i| {
                let mut p = start.clone();
                if i > 0 {
                    p[i - 1] += step;
                }
                let v = fun(&p);
                (p, v)
            })
            .collect();
        for _ in 0..max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if simplex[n].1 - simplex[0].1 <= ftol * simplex[0].1.abs().max(1e-30) || simplex[0].1 <= ftol {
                break;
            }
            let centroid = simplex[..n].iter().fold(Vector::zeros(n), |acc, p| acc + &p.0) / n as f64;
            let worst = simplex[n].clone();
            let refl = &centroid + (&centroid - &worst.0);
            let fr = fun(&refl);
            if fr < simplex[0].1 {
                let exp = &centroid + (&refl - &centroid) * 2.0;
                let fe = fun(&exp);
                simplex[n] = if fe < fr { (exp, fe) } else { (refl, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (refl, fr);
            } else {
                let con = &centroid + (&worst.0 - &centroid) * 0.5;
                let fc = fun(&con);
                if fc < worst.1 {
                    simplex[n] = (con, fc);
                } else {
                    let b = simplex[0].0.clone();
                    for p in simplex.iter_mut().skip(1) {
                        p.0 = &b + (&p.0 - &b) * 0.5;
                        p.1 = fun(&p.0);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        best = best.min(simplex[0].1);
        start = simplex[0].0.clone();
        step *= 0.1;
    }
    best
}

#[derive(Debug, Clone)]
enum Domain {
    Subspace(Mat),
    Interval(Vector, Vector),
}

impl Domain {
    fn full(d: usize) -> Self {
        Domain::Subspace(Mat::identity(d, d))
    }

    fn negate(self) -> Self {
        match self {
            Domain::Interval(lo, hi) => Domain::Interval(-hi, -lo),
            s => s,
        }
    }

    fn as_interval(&self) -> Option<(Vector, Vector)> {
        match self {
            Domain::Interval(l, h) => Some((l.clone(), h.clone())),
            Domain::Subspace(b) => {
                let d = b.nrows();
                if b.ncols() == d {
                    Some((Vector::from_element(d, f64::NEG_INFINITY), Vector::from_element(d, f64::INFINITY)))
                } else if b.ncols() == 0 {
                    Some((Vector::zeros(d), Vector::zeros(d)))
                } else {
                    None
                }
            }
        }
    }
}

/// A point in the intersection of relative interiors.
fn ri_intersection(a: &Domain, b: &Domain) -> Result<Option<Vector>> {
    if let (Domain::Subspace(x), Domain::Subspace(_)) = (a, b) {
        return Ok(Some(Vector::zeros(x.nrows())));
    }
    let (Some((la, ha)), Some((lb, hb))) = (a.as_interval(), b.as_interval()) else {
        return Err(Error::UnsupportedGeometry("subspace meets interval domain".into()));
    };
    let d = la.len();
    let mut out = Vector::zeros(d);
    for i in 0..d {
        let pa = la[i] == ha[i];
        let pb = lb[i] == hb[i];
        out[i] = match (pa, pb) {
            (true, true) if la[i] == lb[i] => la[i],
            (true, true) => return Ok(None),
            (true, false) if la[i] > lb[i] && la[i] < hb[i] => la[i],
            (false, true) if lb[i] > la[i] && lb[i] < ha[i] => lb[i],
            (true, false) | (false, true) => return Ok(None),
            (false, false) => {
                let lo = la[i].max(lb[i]);
                let hi = ha[i].min(hb[i]);
                if lo >= hi {
                    return Ok(None);
                }
                match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo.max(0.0) + 1.0,
                    (false, true) => hi.min(0.0) - 1.0,
                    (false, false) => 0.0,
                }
            }
        };
    }
    Ok(Some(out))
}

fn box_of(f: &crate::convexfun::ConvexFunction, coords: &[usize]) -> Result<Domain> {
    if let Some(qf) = f.quadratic_form() {
        if !qf.is_constrained() {
            return Ok(Domain::full(coords.len()));
        }
    }
    match crate::convexfun::domain_box(f) {
        Some((lo, hi)) => Ok(Domain::Interval(
            Vector::from_iterator(coords.len(), coords.iter().map(|&i| lo[i])),
            Vector::from_iterator(coords.len(), coords.iter().map(|&i| hi[i])),
        )),
        None => Err(Error::UnsupportedGeometry("domain is not a box".into())),
    }
}

/// Projections of a relation onto the flows and efforts of a port.
fn port_domains(m: &MonotoneRelation, name: &str) -> Result<(Domain, Domain)> {
    let (off, d) = port(m, name)?;
    let coords: Vec<usize> = (off..off + d).collect();
    let n = m.dim();
    match &m.kind {
        RelationKind::Linear(_) | RelationKind::Skew(_) => {
            let l = m.as_linear().expect("linear");
            let z = l.basis();
            let zf = linalg::selector(n, &coords) * z.rows(0, n);
            let ze = linalg::selector(n, &coords) * z.rows(n, n);
            Ok((Domain::Subspace(linalg::range_basis(&zf)), Domain::Subspace(linalg::range_basis(&ze))))
        }
        RelationKind::Subdiff(g) => {
            let phi = g.unsigned_phi()?;
            let primal = box_of(&phi, &coords)?;
            let dual = match phi.conjugate() {
                Ok(c) => box_of(&c, &coords)?,
                Err(_) => return Err(Error::UnsupportedGeometry("range of the subdifferential unknown".into())),
            };
            Ok(match g.orientation {
                Orientation::Flow => (primal, dual),
                Orientation::Effort => (dual, primal),
            })
        }
        RelationKind::Curve(_) => Ok((Domain::full(1), Domain::full(1))),
        RelationKind::Product(parts) => {
            let mut base = 0;
            for p in parts {
                if p.dim() + base > off {
                    let local = p.space.ports().iter().find(|q| q.name == name);
                    return match local {
                        Some(_) => port_domains(p, name),
                        None => Err(Error::PortMismatch(format!("port {name} spans product parts"))),
                    };
                }
                base += p.dim();
            }
            Err(Error::PortMismatch(format!("no port named {name}")))
        }
        _ => Err(Error::UnsupportedGeometry("relation projections are not polyhedral".into())),
    }
}

/// Witness (f̄, ē) for the relative-interior qualification of a composition
/// through `shared`: f̄ ∈ ri C_f(a) with −f̄ ∈ ri C_f(b), and ē ∈ ri C_e(a) ∩ ri C_e(b).
pub fn qualification_check(ma: &MonotoneRelation, mb: &MonotoneRelation, shared: &str) -> Result<Option<(Vector, Vector)>> {
    let (fa, ea) = port_domains(ma, shared)?;
    let (fb, eb) = port_domains(mb, shared)?;
    let Some(f) = ri_intersection(&fa, &fb.negate())? else {
        return Ok(None);
    };
    let Some(e) = ri_intersection(&ea, &eb)? else {
        return Ok(None);
    };
    Ok(Some((f, e)))
}
