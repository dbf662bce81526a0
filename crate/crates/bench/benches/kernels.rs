use criterion::{criterion_group, criterion_main, Criterion};
use iph_bench::{coulomb, coupled_network, m, primal_dual, v};
use iph_core::passivity::variational_integrate;
use iph_core::relations::{check_cyclic, check_monotone, compose_feedback, Orientation, Port, SubdiffGraph};
use iph_core::simulate::{integrate_prox_euler, integrate_rk4};
use iph_core::steadystate::solve_network_equilibrium;
use iph_core::{ConvexFunction, InputSignal, MonotoneRelation, PortSpace};
use std::hint::black_box;

fn convex(c: &mut Criterion) {
    let f = ConvexFunction::sum(vec![
        ConvexFunction::quadratic(m(2, 2, &[2.0, 0.5, 0.5, 1.0]), v(&[0.1, -0.3]), 0.0).unwrap(),
        ConvexFunction::weighted_l1(v(&[0.5, 1.0])).unwrap(),
    ])
    .unwrap();
    let x = v(&[1.3, -0.7]);
    c.bench_function("prox_quadratic_plus_l1", |b| b.iter(|| f.prox(black_box(&x), 0.5).unwrap()));
    let g = ConvexFunction::affine_precompose(ConvexFunction::abs(), m(1, 1, &[2.0]), v(&[0.5])).unwrap();
    c.bench_function("conjugate_affine_abs", |b| b.iter(|| black_box(&g).conjugate().unwrap()));
}

fn relations(c: &mut Criterion) {
    let rot = MonotoneRelation::skew(PortSpace::single("p", 2), m(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
    c.bench_function("check_monotone_skew_1000", |b| b.iter(|| check_monotone(black_box(&rot), 1000, 0)));
    let curve =
        MonotoneRelation::subdiff(PortSpace::single("p", 1), SubdiffGraph::plain(ConvexFunction::abs(), Orientation::Flow))
            .unwrap();
    c.bench_function("check_cyclic_abs", |b| b.iter(|| check_cyclic(black_box(&curve), 6, 1000, 0)));
    let two = |a: &str, b: &str| PortSpace::new(vec![Port::new(a, 1), Port::new(b, 1)]).unwrap();
    let q = ConvexFunction::quadratic(m(2, 2, &[1.0, 0.0, 0.0, 1.0]), v(&[0.0, 0.0]), 0.0).unwrap();
    let ga = MonotoneRelation::subdiff(two("a", "b"), SubdiffGraph::plain(q.clone(), Orientation::Effort)).unwrap();
    let gb = MonotoneRelation::subdiff(two("c", "d"), SubdiffGraph::plain(q, Orientation::Effort)).unwrap();
    c.bench_function("compose_feedback_quadratic", |b| b.iter(|| compose_feedback(&ga, "b", &gb, "c").unwrap()));
}

fn simulation(c: &mut Criterion) {
    let pd = primal_dual();
    let u = InputSignal::zero(1);
    let x0 = v(&[3.0, 2.0]);
    c.bench_function("rk4_primal_dual_1000_steps", |b| b.iter(|| integrate_rk4(&pd, black_box(&x0), &u, 10.0, 1e-2).unwrap()));
    let cl = coulomb();
    c.bench_function("prox_euler_coulomb_1000_steps", |b| {
        b.iter(|| integrate_prox_euler(&cl, black_box(&v(&[2.0, 0.0])), &InputSignal::zero(0), 1.0, 1e-3).unwrap())
    });
    let nominal = integrate_rk4(&pd, &x0, &u, 10.0, 1e-2).unwrap();
    let du = InputSignal::Constant(v(&[0.1]));
    c.bench_function("variational_primal_dual", |b| {
        b.iter(|| variational_integrate(&pd, &nominal, &v(&[1.0, 0.0]), &du, &u).unwrap())
    });
}

fn equilibrium(c: &mut Criterion) {
    let net = coupled_network();
    c.bench_function("steady_coupled_gradient", |b| b.iter(|| solve_network_equilibrium(black_box(&net)).unwrap()));
}

criterion_group!(benches, convex, relations, simulation, equilibrium);
criterion_main!(benches);
