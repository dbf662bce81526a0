use super::*;
use proptest::prelude::*;

fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

fn grid_argmin(f: &ConvexFunction, v0: f64, h: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let n = 400_001;
    for k in 0..n {
        let x = -10.0 + 20.0 * k as f64 / (n - 1) as f64;
        if let ExtendedReal::Finite(val) = f.eval(&v(&[x])).unwrap() {
            let obj = h * val + 0.5 * (x - v0) * (x - v0);
            if obj < best.0 {
                best = (obj, x);
            }
        }
    }
    best.1
}

#[test]
fn subdiff_of_abs_at_kink() {
    let f = ConvexFunction::abs();
    assert_eq!(f.subdiff_set_1d(0.0).unwrap(), Some((-1.0, 1.0)));
    assert_eq!(f.subdiff_set_1d(2.0).unwrap(), Some((1.0, 1.0)));
    assert_eq!(f.subgrad(&v(&[0.0])).unwrap(), Some(v(&[0.0])));
}

#[test]
fn subdiff_of_box_boundary_is_half_line() {
    let f = ConvexFunction::indicator_box(v(&[-1.0]), v(&[1.0])).unwrap();
    assert_eq!(f.subdiff_set_1d(1.0).unwrap(), Some((0.0, f64::INFINITY)));
    assert_eq!(f.subdiff_set_1d(-1.0).unwrap(), Some((f64::NEG_INFINITY, 0.0)));
    assert_eq!(f.subdiff_set_1d(2.0).unwrap(), None);
}

#[test]
fn conjugate_of_abs_is_box_indicator() {
    let g = ConvexFunction::abs().conjugate().unwrap();
    assert_eq!(g.eval(&v(&[0.5])).unwrap(), ExtendedReal::Finite(0.0));
    assert_eq!(g.eval(&v(&[1.5])).unwrap(), ExtendedReal::PosInf);
}

#[test]
fn conjugate_of_box_is_abs() {
    let f = ConvexFunction::indicator_box(v(&[-1.0]), v(&[1.0])).unwrap();
    let g = f.conjugate().unwrap();
    for y in [-2.0, -0.3, 0.0, 1.7] {
        assert!((g.eval(&v(&[y])).unwrap().value() - f64::abs(y)).abs() < 1e-12);
    }
}

#[test]
fn conjugate_of_shifted_abs() {
    let f = ConvexFunction::affine_precompose(ConvexFunction::abs(), Mat::identity(1, 1), v(&[-2.0])).unwrap();
    let g = f.conjugate().unwrap();
    assert!((g.eval(&v(&[0.5])).unwrap().value() - 1.0).abs() < 1e-12);
    assert_eq!(g.eval(&v(&[1.5])).unwrap(), ExtendedReal::PosInf);
}

#[test]
fn conjugate_of_affine_precompose_with_wide_map() {
    let l = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
    let f = ConvexFunction::affine_precompose(ConvexFunction::abs(), l, v(&[0.0])).unwrap();
    let g = f.conjugate().unwrap();
    assert_eq!(g.eval(&v(&[0.5, 0.5])).unwrap(), ExtendedReal::Finite(0.0));
    assert_eq!(g.eval(&v(&[0.5, -0.5])).unwrap(), ExtendedReal::PosInf);
    assert_eq!(g.eval(&v(&[2.0, 2.0])).unwrap(), ExtendedReal::PosInf);
}

#[test]
fn unsupported_conjugate_is_reported() {
    let f = ConvexFunction::sum(vec![
        ConvexFunction::abs(),
        ConvexFunction::indicator_box(v(&[-1.0]), v(&[1.0])).unwrap(),
        ConvexFunction::quadratic(Mat::identity(1, 1), v(&[0.0]), 0.0).unwrap(),
    ])
    .unwrap();
    assert!(matches!(f.conjugate(), Err(Error::UnsupportedConjugate(_))));
}

#[test]
fn prox_of_quadratic_with_constraint() {
    let f = ConvexFunction::sum(vec![
        ConvexFunction::quadratic(Mat::identity(2, 2), v(&[0.0, 0.0]), 0.0).unwrap(),
        ConvexFunction::indicator_affine(Mat::from_row_slice(1, 2, &[1.0, 1.0]), v(&[1.0])).unwrap(),
    ])
    .unwrap();
    let p = f.prox(&v(&[1.0, 0.0]), 1.0).unwrap();
    assert!((p - v(&[0.75, 0.25])).norm() < 1e-12);
}

#[test]
fn prox_forward_backward_matches_grid() {
    let q = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let quad = ConvexFunction::quadratic(q, v(&[0.0, 0.0]), 0.0).unwrap();
    let f = ConvexFunction::sum(vec![quad, ConvexFunction::weighted_l1(v(&[1.0, 1.0])).unwrap()]).unwrap();
    let p = f.prox(&v(&[3.0, 0.5]), 1.0).unwrap();
    // Optimality: 0 ∈ p − v + Qp + ∂‖p‖₁.
    let r = &p - v(&[3.0, 0.5]) + Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]) * &p;
    for i in 0..2 {
        if p[i] != 0.0 {
            assert!((r[i] + p[i].signum()).abs() < 1e-8);
        } else {
            assert!(r[i].abs() <= 1.0 + 1e-8);
        }
    }
}

#[test]
fn prox_1d_matches_grid_oracle() {
    let cases = vec![
        ConvexFunction::abs(),
        ConvexFunction::indicator_box(v(&[-1.0]), v(&[2.0])).unwrap(),
        ConvexFunction::sum(vec![
            ConvexFunction::quadratic(Mat::from_element(1, 1, 3.0), v(&[1.0]), 0.0).unwrap(),
            ConvexFunction::indicator_box(v(&[0.0]), v(&[f64::INFINITY])).unwrap(),
        ])
        .unwrap(),
    ];
    for f in cases {
        for (x, h) in [(2.5, 0.5), (-3.0, 2.0), (0.1, 1.0)] {
            let p = f.prox(&v(&[x]), h).unwrap()[0];
            assert!((p - grid_argmin(&f, x, h)).abs() < 1e-4);
        }
    }
}

#[test]
fn numeric_conjugate_matches_closed_form() {
    let f = ConvexFunction::quadratic(Mat::from_element(1, 1, 2.0), v(&[0.0]), 0.0).unwrap();
    let est = f.numeric_conjugate_eval(&v(&[1.0]), 3.0, 6001).unwrap();
    assert!((est - 0.25).abs() < 1e-6);
}

#[test]
fn quadratic_rejects_indefinite() {
    let q = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(matches!(ConvexFunction::quadratic(q, v(&[0.0, 0.0]), 0.0), Err(Error::NotPositiveSemidefinite { .. })));
}

#[test]
fn infeasible_affine_indicator_is_rejected() {
    let a = Mat::from_row_slice(2, 1, &[1.0, 1.0]);
    assert!(matches!(ConvexFunction::indicator_affine(a, v(&[0.0, 1.0])), Err(Error::InfeasibleConstraint { .. })));
}

fn arb_1d() -> impl Strategy<Value = ConvexFunction> {
    prop_oneof![
        (0.0..3.0f64, -2.0..2.0f64)
            .prop_map(|(q, a)| ConvexFunction::quadratic(Mat::from_element(1, 1, q), v(&[a]), 0.0).unwrap()),
        (0.1..3.0f64).prop_map(|w| ConvexFunction::weighted_l1(v(&[w])).unwrap()),
        (-2.0..0.0f64, 0.0..2.0f64).prop_map(|(l, h)| ConvexFunction::indicator_box(v(&[l]), v(&[h])).unwrap()),
        (0.1..3.0f64, -2.0..2.0f64).prop_map(|(w, m)| ConvexFunction::affine_precompose(
            ConvexFunction::weighted_l1(v(&[w])).unwrap(),
            Mat::identity(1, 1),
            v(&[-m])
        )
        .unwrap()),
        (0.5..3.0f64, -2.0..2.0f64, prop::bool::ANY).prop_map(|(d, s, neg)| ConvexFunction::affine_precompose(
            ConvexFunction::indicator_box(v(&[-1.0]), v(&[f64::INFINITY])).unwrap(),
            Mat::from_element(1, 1, if neg { -d } else { d }),
            v(&[s])
        )
        .unwrap()),
    ]
}

fn arb_2d_quad() -> impl Strategy<Value = ConvexFunction> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(p, q, r, a, b)| {
        let l = Mat::from_row_slice(2, 2, &[1.0 + p.abs(), 0.0, q, 0.5 + r.abs()]);
        ConvexFunction::quadratic(&l * l.transpose(), v(&[a, b]), 0.0).unwrap()
    })
}

proptest! {
    #[test]
    fn moreau_decomposition(f in arb_1d(), x in -5.0..5.0f64) {
        let g = f.conjugate().unwrap();
        let p = f.prox(&v(&[x]), 1.0).unwrap();
        let d = g.prox(&v(&[x]), 1.0).unwrap();
        prop_assert!((p[0] + d[0] - x).abs() < 1e-9);
    }

    #[test]
    fn fenchel_young(f in arb_1d(), x in -5.0..5.0f64) {
        let g = f.conjugate().unwrap();
        let xv = v(&[x]);
        let p = f.prox(&xv, 1.0).unwrap();
        let e = &xv - &p;
        let fp = f.eval(&p).unwrap().value();
        let ge = g.eval(&e).unwrap().value();
        prop_assert!((fp + ge - p.dot(&e)).abs() < 1e-8);
        let y = v(&[x * 0.37 - 0.2]);
        let fy = f.eval(&y).unwrap();
        if fy.is_finite() {
            prop_assert!(fy.value() + ge >= y.dot(&e) - 1e-9);
        }
    }

    #[test]
    fn biconjugate_reproduces_function(f in arb_1d(), x in -3.0..3.0f64) {
        let gg = f.conjugate().unwrap().conjugate().unwrap();
        let a = f.eval(&v(&[x])).unwrap();
        let b = gg.eval(&v(&[x])).unwrap();
        match (a, b) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => prop_assert!((a - b).abs() < 1e-9),
            (a, b) => prop_assert_eq!(a.is_finite(), b.is_finite()),
        }
    }

    #[test]
    fn prox_is_firmly_nonexpansive(f in arb_1d(), x in -5.0..5.0f64, y in -5.0..5.0f64, h in 0.1..3.0f64) {
        let px = f.prox(&v(&[x]), h).unwrap()[0];
        let py = f.prox(&v(&[y]), h).unwrap()[0];
        prop_assert!((px - py).powi(2) <= (px - py) * (x - y) + 1e-12);
    }

    #[test]
    fn inverse_subdifferential_from_conjugate(f in arb_1d(), x in -5.0..5.0f64) {
        // With p = prox(x), e = x − p lies in ∂φ(p) and p in ∂φ*(e).
        let g = f.conjugate().unwrap();
        let p = f.prox(&v(&[x]), 1.0).unwrap()[0];
        let e = x - p;
        let (l, u) = f.subdiff_set_1d(p).unwrap().unwrap();
        prop_assert!(e >= l - 1e-9 && e <= u + 1e-9);
        let (l2, u2) = g.subdiff_set_1d(e).unwrap().unwrap();
        prop_assert!(p >= l2 - 1e-9 && p <= u2 + 1e-9);
    }

    #[test]
    fn quadratic_conjugate_is_involutive(f in arb_2d_quad(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let gg = f.conjugate().unwrap().conjugate().unwrap();
        let p = v(&[x, y]);
        prop_assert!((f.eval(&p).unwrap().value() - gg.eval(&p).unwrap().value()).abs() < 1e-8);
    }

    #[test]
    fn subgrad_is_in_subdifferential(f in arb_1d(), x in -3.0..3.0f64) {
        if let Some(g) = f.subgrad(&v(&[x])).unwrap() {
            let (l, u) = f.subdiff_set_1d(x).unwrap().unwrap();
            prop_assert!(g[0] >= l - 1e-12 && g[0] <= u + 1e-12);
        }
    }
}
