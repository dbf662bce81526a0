use super::*;
use crate::convexfun::{ConvexFunction, Curvature};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

fn m(r: usize, c: usize, x: &[f64]) -> Mat {
    Mat::from_row_slice(r, c, x)
}

fn abs_graph() -> MonotoneRelation {
    MonotoneRelation::subdiff(PortSpace::single("p", 1), SubdiffGraph::plain(ConvexFunction::abs(), Orientation::Flow)).unwrap()
}

fn rotation(j: &[f64]) -> MonotoneRelation {
    MonotoneRelation::skew(PortSpace::single("p", 2), m(2, 2, j)).unwrap()
}

fn scalar_linear(kf: f64, ke: f64) -> MonotoneRelation {
    MonotoneRelation::linear(PortSpace::single("p", 1), LinearRelation::new(m(1, 1, &[kf]), m(1, 1, &[ke])).unwrap()).unwrap()
}

#[test]
fn skew_graph_is_monotone_not_cyclic() {
    let r = rotation(&[0.0, -1.0, 1.0, 0.0]);
    assert_eq!(check_monotone(&r, 100, 0).verdict, Verdict::Holds);
    let c = check_cyclic(&r, 3, 100, 0);
    assert_eq!(c.verdict, Verdict::Violated);
    let w = c.witness.unwrap();
    assert_eq!(w.flows.len(), 3);
    assert!(w.value < 0.0);
    assert_eq!(cyclic_sum(&w.points()), w.value);
    assert!(w.points().iter().all(|(f, e)| r.membership(f, e, 1e-12)));
}

#[test]
fn hand_cycle_on_rotation() {
    let j = m(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let pts: Vec<(Vector, Vector)> = [v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[-1.0, 0.0])]
        .into_iter()
        .map(|f| {
            let e = j.transpose() * &f;
            (f, e)
        })
        .collect();
    let r = MonotoneRelation::skew(PortSpace::single("p", 2), j).unwrap();
    assert!(pts.iter().all(|(f, e)| r.membership(f, e, 1e-15)));
    assert_eq!(cyclic_sum(&pts), -2.0);
}

#[test]
fn zero_skew_is_cyclic() {
    let r = rotation(&[0.0, 0.0, 0.0, 0.0]);
    assert_eq!(check_cyclic(&r, 3, 10, 0).verdict, Verdict::Holds);
}

#[test]
fn tunnel_diode_is_not_monotone() {
    let c = ScalarCurve::tunnel_diode(1.0, 1.0, 0.0, 0.0, Orientation::Flow).unwrap();
    let r = MonotoneRelation::curve(PortSpace::single("d", 1), c).unwrap();
    let rep = check_monotone(&r, 10_000, 1);
    assert_eq!(rep.verdict, Verdict::Violated);
    let w = rep.witness.unwrap();
    assert!(w.flows.iter().all(|f| f[0].abs() < 1.0));
    let p = w.points();
    assert!((&p[0].1 - &p[1].1).dot(&(&p[0].0 - &p[1].0)) < 0.0);
}

#[test]
fn positive_gain_is_monotone() {
    // e = 2f as 2f − e = 0.
    assert_eq!(check_monotone(&scalar_linear(2.0, -1.0), 10, 0).verdict, Verdict::Holds);
    assert_eq!(check_monotone(&scalar_linear(2.0, 1.0), 10, 0).verdict, Verdict::Violated);
}

#[test]
fn abs_graph_checks_and_membership() {
    let r = abs_graph();
    assert_eq!(check_cyclic(&r, 6, 100, 0).verdict, Verdict::Holds);
    assert!(r.membership(&v(&[0.0]), &v(&[0.3]), 1e-12));
    assert!(!r.membership(&v(&[0.0]), &v(&[1.5]), 1e-12));
    assert!(r.membership(&v(&[2.0]), &v(&[1.0]), 1e-12));
}

#[test]
fn monotone_cubic_curve_survives_sampled_cycles() {
    let c = ScalarCurve::new(vec![], vec![vec![0.0, 0.0, 0.0, 1.0]], Orientation::Flow).unwrap();
    let r = MonotoneRelation::curve(PortSpace::single("p", 1), c).unwrap();
    assert_eq!(check_monotone(&r, 2000, 3).verdict, Verdict::Inconclusive);
    assert_ne!(check_cyclic(&r, 6, 2000, 3).verdict, Verdict::Violated);
}

#[test]
fn dirac_classification() {
    let skew = rotation(&[0.0, -1.0, 1.0, 0.0]).as_linear().unwrap();
    assert!(is_dirac(&skew));
    assert!(is_separable(&skew).unwrap().is_none());
    assert!(!is_dirac(&scalar_linear(2.0, -1.0).as_linear().unwrap()));
    let zero = rotation(&[0.0; 4]).as_linear().unwrap();
    assert_eq!(is_separable(&zero).unwrap().unwrap().ncols(), 0);
    assert!(matches!(is_separable(&scalar_linear(2.0, -1.0).as_linear().unwrap()), Err(Error::NotDirac)));
}

#[test]
fn kirchhoff_is_separable_with_kernel_of_d() {
    // Path graph with 3 nodes and 2 edges; D is the incidence matrix.
    let d = m(1, 3, &[1.0, -1.0, 0.0]);
    let space = PortSpace::single("b", 3);
    let r = MonotoneRelation::kirchhoff(space, &d).unwrap();
    let l = r.as_linear().unwrap();
    assert!(is_dirac(&l));
    let k = is_separable(&l).unwrap().unwrap();
    assert_eq!(k.ncols(), 2);
    assert!((&d * &k).norm() < 1e-12);
}

#[test]
fn resistive_examples() {
    assert!(is_resistive(&m(1, 1, &[1.0]), &m(1, 1, &[2.0])));
    assert!(!is_resistive(&Mat::identity(2, 2), &m(2, 2, &[0.0, -1.0, 1.0, 0.0])));
    assert!(is_resistive(&m(1, 1, &[0.0]), &m(1, 1, &[1.0])));

    let g = resistive_generator(&m(1, 1, &[1.0]), &m(1, 1, &[2.0])).unwrap();
    for f in [-2.0, 0.0, 3.0] {
        assert!((g.phi.eval(&v(&[f])).unwrap().value() - 0.25 * f * f).abs() < 1e-12);
    }
    let z = resistive_generator(&m(1, 1, &[0.0]), &m(1, 1, &[1.0])).unwrap();
    assert_eq!(z.phi.eval(&v(&[5.0])).unwrap().value(), 0.0);
    let id = resistive_generator(&Mat::identity(2, 2), &Mat::identity(2, 2)).unwrap();
    assert!((id.phi.eval(&v(&[1.0, 2.0])).unwrap().value() - 2.5).abs() < 1e-12);
}

#[test]
fn resistive_generator_matches_kernel_relation() {
    let r_f = m(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let r_e = m(2, 2, &[2.0, 0.0, 0.0, 1.0]);
    let space = PortSpace::single("r", 2);
    let kernel = MonotoneRelation::resistive(space.clone(), r_f.clone(), r_e.clone()).unwrap();
    let graph = MonotoneRelation::subdiff(space, resistive_generator(&r_f, &r_e).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (f, e) = kernel.sample(&mut rng, 5.0).unwrap();
        assert!(graph.membership(&f, &e, 1e-10));
        let (f, e) = graph.sample(&mut rng, 5.0).unwrap();
        assert!(kernel.residual(&f, &e) < 1e-10);
    }
}

#[test]
fn compose_two_resistors() {
    let a = MonotoneRelation::linear(
        PortSpace::new(vec![Port::new("x", 1), Port::new("s", 1)]).unwrap(),
        LinearRelation::new(m(2, 2, &[1.0, 0.0, 0.0, 1.0]), m(2, 2, &[-1.0, 0.0, 0.0, -1.0])).unwrap(),
    )
    .unwrap();
    let b = MonotoneRelation::linear(
        PortSpace::new(vec![Port::new("s", 1), Port::new("y", 1)]).unwrap(),
        LinearRelation::new(m(2, 2, &[1.0, 0.0, 0.0, 1.0]), m(2, 2, &[-1.0, 0.0, 0.0, -1.0])).unwrap(),
    )
    .unwrap();
    let c = compose(&a, &b, "s").unwrap();
    // f_s = e_s and −f_s = e_s force e_s = 0; external ports stay e = f.
    let l = c.as_linear().unwrap();
    assert_eq!(l.subspace_dim(), 2);
    assert!(c.membership(&v(&[1.0, -2.0]), &v(&[1.0, -2.0]), 1e-12));
    assert!(!c.membership(&v(&[1.0, 0.0]), &v(&[2.0, 0.0]), 1e-9));
}

#[test]
fn feedback_of_quadratics() {
    let two = PortSpace::new(vec![Port::new("a", 1), Port::new("b", 1)]).unwrap();
    let q = ConvexFunction::quadratic(Mat::identity(2, 2), v(&[0.0, 0.0]), 0.0).unwrap();
    let g = MonotoneRelation::subdiff(two.clone(), SubdiffGraph::plain(q.clone(), Orientation::Effort)).unwrap();
    let h = MonotoneRelation::subdiff(
        PortSpace::new(vec![Port::new("c", 1), Port::new("d", 1)]).unwrap(),
        SubdiffGraph::plain(q, Orientation::Effort),
    )
    .unwrap();
    let fc = compose_feedback(&g, "b", &h, "c").unwrap();
    assert_eq!(fc.curvature, Some(Curvature::PositiveSemidefinite));
    let k = fc.generator.unwrap();
    assert!((k.q - Mat::identity(2, 2)).norm() < 1e-12);
    assert!(k.a.norm() < 1e-12 && k.c.abs() < 1e-12);
}

#[test]
fn feedback_of_coupled_gradients_gives_cross_term() {
    // K_i(e_i, u_i) = ½(e_i − c_i)² + b_i e_i u_i.
    let (b1, b2) = (0.5, 1.0);
    let k = |c: f64, b: f64| QuadraticForm::new(m(2, 2, &[1.0, b, b, 0.0]), v(&[-c, 0.0]), 0.5 * c * c);
    let s1 = PortSpace::new(vec![Port::new("x1", 1), Port::new("u1", 1)]).unwrap();
    let s2 = PortSpace::new(vec![Port::new("x2", 1), Port::new("u2", 1)]).unwrap();
    let g1 = MonotoneRelation::generator(s1, k(1.0, b1)).unwrap();
    let g2 = MonotoneRelation::generator(s2, k(2.0, b2)).unwrap();
    let fc = compose_feedback(&g1, "u1", &g2, "u2").unwrap();
    assert_eq!(fc.curvature, Some(Curvature::Indefinite));
    assert!(fc.relation.flags.iter().any(|f| f == FLAG_STATIONARY));
    let gen = fc.generator.unwrap();
    let expect = m(2, 2, &[1.0, b1 * b2, b1 * b2, 1.0]);
    assert!((gen.q - expect).amax() <= 1e-12);
    assert!((gen.a - v(&[-1.0, -2.0])).amax() <= 1e-12);
    assert!((gen.c - 2.5).abs() <= 1e-12);
}

#[test]
fn unbounded_feedback_is_reported() {
    // g = ½u² − u, h = ½v²: the inner block [[1, −1], [−1, 1]] is singular and the slope along (1, 1) is −1.
    let a = MonotoneRelation::generator(
        PortSpace::new(vec![Port::new("x", 1), Port::new("u", 1)]).unwrap(),
        QuadraticForm::new(m(2, 2, &[1.0, 0.0, 0.0, 1.0]), v(&[0.0, -1.0]), 0.0),
    )
    .unwrap();
    let b = MonotoneRelation::generator(
        PortSpace::new(vec![Port::new("v", 1), Port::new("y", 1)]).unwrap(),
        QuadraticForm::new(m(2, 2, &[1.0, 0.0, 0.0, 1.0]), v(&[0.0, 0.0]), 0.0),
    )
    .unwrap();
    match compose_feedback(&a, "u", &b, "v") {
        Err(Error::UnboundedInnerProblem { direction }) => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            assert!(direction.iter().all(|d| (d.abs() - s).abs() < 1e-9), "{direction:?}");
            assert!(direction[0] * direction[1] > 0.0);
        }
        other => panic!("expected unbounded inner problem, got {other:?}"),
    }
}

#[test]
fn flow_composition_matches_grid_inf() {
    // φ_a(f_a, f) = ½f_a² + ½(f − f_a)², φ_b(f_b, g) = g² + ½f_b²; θ*(f_a, f_b) = inf_f φ_a(f_a, f) + φ_b(f_b, −f).
    let sa = PortSpace::new(vec![Port::new("a", 1), Port::new("s", 1)]).unwrap();
    let sb = PortSpace::new(vec![Port::new("s", 1), Port::new("b", 1)]).unwrap();
    let pa = ConvexFunction::quadratic(m(2, 2, &[2.0, -1.0, -1.0, 1.0]), v(&[0.0, 0.0]), 0.0).unwrap();
    let pb = ConvexFunction::quadratic(m(2, 2, &[2.0, 0.0, 0.0, 1.0]), v(&[0.0, 0.0]), 0.0).unwrap();
    let ma = MonotoneRelation::subdiff(sa, SubdiffGraph::plain(pa.clone(), Orientation::Flow)).unwrap();
    let mb = MonotoneRelation::subdiff(sb, SubdiffGraph::plain(pb.clone(), Orientation::Flow)).unwrap();
    let c = compose(&ma, &mb, "s").unwrap();
    let RelationKind::Subdiff(g) = &c.kind else { panic!("expected exact composition") };
    for (fa, fb) in [(1.0, 0.0), (0.3, -2.0), (-1.5, 0.7)] {
        let mut best = f64::INFINITY;
        for k in 0..200_001 {
            let f = -10.0 + 20.0 * k as f64 / 200_000.0;
            let val = pa.eval(&v(&[fa, f])).unwrap().value() + pb.eval(&v(&[-f, fb])).unwrap().value();
            best = best.min(val);
        }
        let got = g.phi.eval(&v(&[fa, fb])).unwrap().value();
        assert!((got - best).abs() < 1e-5, "{got} vs {best}");
    }
}

#[test]
fn implicit_composition_membership() {
    let a = abs_graph();
    let b = MonotoneRelation::linear(
        PortSpace::new(vec![Port::new("p", 1), Port::new("q", 1)]).unwrap(),
        LinearRelation::new(m(2, 2, &[1.0, 1.0, 0.0, 0.0]), m(2, 2, &[0.0, 0.0, 1.0, -1.0])).unwrap(),
    )
    .unwrap();
    let c = compose(&a, &b, "p").unwrap();
    assert!(c.flags.iter().any(|f| f == FLAG_IMPLICIT));
    // Shared flow f_p = 2 on a, −2 on b; f_q = −f_pb = 2; e_p = sign(2) = 1 = e_q.
    assert!(c.membership(&v(&[2.0]), &v(&[1.0]), 1e-6));
    assert!(!c.membership(&v(&[2.0]), &v(&[0.5]), 1e-6));
}

#[test]
fn qualification_examples() {
    let a = scalar_linear(2.0, -1.0);
    let b = scalar_linear(1.0, -1.0);
    assert_eq!(qualification_check(&a, &b, "p").unwrap(), Some((v(&[0.0]), v(&[0.0]))));
    let q = qualification_check(&abs_graph(), &b, "p").unwrap().unwrap();
    assert_eq!(q.0, v(&[0.0]));
    let half = |lo: f64| {
        let phi = ConvexFunction::indicator_box(v(&[lo]), v(&[f64::INFINITY])).unwrap();
        MonotoneRelation::subdiff(PortSpace::single("p", 1), SubdiffGraph::plain(phi, Orientation::Flow)).unwrap()
    };
    assert_eq!(qualification_check(&half(1.0), &half(1.0), "p").unwrap(), None);
}

#[test]
fn composed_linear_relations_stay_monotone() {
    let d = m(1, 3, &[1.0, -1.0, 0.0]);
    let dirac = MonotoneRelation::kirchhoff(PortSpace::new(vec![Port::new("x", 2), Port::new("r", 1)]).unwrap(), &d).unwrap();
    let res = MonotoneRelation::resistive(PortSpace::single("r", 1), m(1, 1, &[1.0]), m(1, 1, &[2.0])).unwrap();
    let c = compose(&dirac, &res, "r").unwrap();
    let l = c.as_linear().unwrap();
    assert_eq!(l.subspace_dim(), 2);
    assert_eq!(check_monotone(&c, 10, 0).verdict, Verdict::Holds);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rep =
        super::check::check_monotone(&MonotoneRelation { kind: RelationKind::Product(vec![c.clone()]), ..c.clone() }, 100, 2);
    assert_eq!(rep.verdict, Verdict::Holds);
    for _ in 0..100 {
        let (f1, e1) = c.sample(&mut rng, 10.0).unwrap();
        let (f2, e2) = c.sample(&mut rng, 10.0).unwrap();
        assert!((e1 - e2).dot(&(f1 - f2)) >= -1e-10);
    }
}
