//! Command implementations. Each returns the JSON document for stdout and
//! the exit code.

use crate::schema::{FormView, NetworkDescription, SystemDescription};
use anyhow::{anyhow, bail, ensure, Result};
use iph_core::linalg::{self, Vector};
use iph_core::passivity::{self, PassivityVerdict, ResidualReport};
use iph_core::relations::{
    self as check, compose, compose_feedback, qualification_check, CheckReport, Orientation, RelationKind, SubdiffGraph, Verdict,
    FLAG_NO_MAXIMALITY,
};
use iph_core::simulate::{self, interconnect_feedback, DEFAULT_DT_PROX, DEFAULT_DT_RK4};
use iph_core::steadystate::{solve_network_equilibrium, EquilibriumReport};
use iph_core::{Error, ExplicitConvexIph, Hamiltonian, InputSignal, MonotoneRelation, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_UNBOUNDED: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub json: Value,
    pub code: i32,
}

impl Outcome {
    fn new(json: Value, violated: bool) -> Self {
        Outcome { json, code: if violated { EXIT_VIOLATION } else { EXIT_OK } }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn vec_of(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Debug, Serialize)]
struct LinearClass {
    dirac: bool,
    /// Basis rows of K when the relation is K × K^⊥.
    separable: Option<Vec<Vec<f64>>>,
    resistive: bool,
}

pub fn check(text: &str, samples: usize, max_cycle: usize, seed: u64) -> Result<Outcome> {
    ensure!(samples > 0, "--samples must be positive");
    ensure!(max_cycle >= 2, "--max-cycle must be at least 2");
    let desc = SystemDescription::parse(text)?;
    let built = desc.build()?;
    let monotone = check::check_monotone(&built.relation, samples, seed);
    let (scope, cyclic) = match built.explicit() {
        Some(ex) => {
            let dissipation = MonotoneRelation::subdiff(ex.ports(), SubdiffGraph::plain(ex.k.clone(), Orientation::Effort))?;
            ("dissipation", check::check_cyclic(&dissipation, max_cycle, samples, seed))
        }
        None => ("relation", check::check_cyclic(&built.relation, max_cycle, samples, seed)),
    };
    let linear = match built.relation.as_linear() {
        Some(l) => {
            let dirac = check::is_dirac(&l);
            let separable = if dirac { check::is_separable(&l)?.map(|k| linalg::to_rows(&k.transpose())) } else { None };
            let resistive = check::is_resistive(&l.k_f, &(-&l.k_e));
            Some(LinearClass { dirac, separable, resistive })
        }
        None => None,
    };
    let violated = [&monotone, &cyclic].iter().any(|r: &&CheckReport| r.verdict == Verdict::Violated);
    Ok(Outcome::new(
        json!({
            "name": desc.name,
            "dim": built.relation.dim(),
            "monotone": monotone,
            "cyclic": { "scope": scope, "report": cyclic },
            "linear": linear,
        }),
        violated,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Prox,
}

impl std::str::FromStr for Method {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "prox" => Ok(Method::Prox),
            _ => bail!("unknown method {s}, expected rk4 or prox"),
        }
    }
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Prox => "prox",
        }
    }
}

pub struct SimulateArgs {
    pub t_end: f64,
    pub dt: Option<f64>,
    pub method: Option<Method>,
    pub x0: Option<Vec<f64>>,
}

fn integrate(
    sys: &ExplicitConvexIph,
    method: Method,
    x0: &Vector,
    u: &InputSignal,
    t_end: f64,
    dt: f64,
) -> iph_core::Result<Trajectory> {
    match method {
        Method::Rk4 => simulate::integrate_rk4(sys, x0, u, t_end, dt),
        Method::Prox => simulate::integrate_prox_euler(sys, x0, u, t_end, dt),
    }
}

fn explicit_of(desc: &SystemDescription) -> Result<(ExplicitConvexIph, InputSignal)> {
    let built = desc.build()?;
    let ex = built
        .explicit()
        .ok_or_else(|| anyhow!("{} is not an explicit system (needs a subdiff relation and a hamiltonian)", desc.name))?;
    let u = built.input.clone().unwrap_or_else(|| InputSignal::zero(ex.m()));
    Ok((ex.clone(), u))
}

/// Returns the summary and the trajectory CSV.
pub fn simulate(text: &str, args: &SimulateArgs) -> Result<(Outcome, String)> {
    let desc = SystemDescription::parse(text)?;
    let (sys, u) = explicit_of(&desc)?;
    let method = args.method.unwrap_or(if sys.is_smooth() { Method::Rk4 } else { Method::Prox });
    let dt = args.dt.unwrap_or(match method {
        Method::Rk4 => DEFAULT_DT_RK4,
        Method::Prox => DEFAULT_DT_PROX,
    });
    ensure!(dt.is_finite() && dt > 0.0, "--dt must be positive, got {dt}");
    ensure!(args.t_end.is_finite() && args.t_end > 0.0, "--t-end must be positive, got {}", args.t_end);
    let x0 = match &args.x0 {
        Some(v) => {
            ensure!(v.len() == sys.n(), "--x0 has {} entries, the state has {}", v.len(), sys.n());
            Vector::from_column_slice(v)
        }
        None => Vector::zeros(sys.n()),
    };
    let traj = integrate(&sys, method, &x0, &u, args.t_end, dt)?;
    let audit = simulate::energy_audit(&sys, &traj)?;
    let summary = json!({
        "name": desc.name,
        "method": method.name(),
        "dt": dt,
        "steps": traj.len() - 1,
        "terminal_time": traj.times.last(),
        "terminal_state": vec_of(traj.terminal_state()),
        "energy_audit_max_residual": audit.max_residual,
    });
    Ok((Outcome::new(summary, false), traj.to_csv()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WiringArg {
    Canonical,
    Feedback,
}

impl std::str::FromStr for WiringArg {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(WiringArg::Canonical),
            "feedback" => Ok(WiringArg::Feedback),
            _ => bail!("unknown wiring {s}, expected canonical or feedback"),
        }
    }
}

fn relation_view(m: &MonotoneRelation) -> Value {
    let ports: Vec<Value> = m.space.ports().iter().map(|p| json!({"name": p.name, "dim": p.dim})).collect();
    let mut v = json!({
        "ports": ports,
        "dim": m.dim(),
        "flags": m.flags,
        "maximal": !m.flags.iter().any(|f| f == FLAG_NO_MAXIMALITY),
    });
    let kind = match &m.kind {
        RelationKind::Linear(l) => {
            v["k_f"] = json!(linalg::to_rows(&l.k_f));
            v["k_e"] = json!(linalg::to_rows(&l.k_e));
            "linear"
        }
        RelationKind::Generator(k) => {
            v["generator"] = to_value(&FormView::from(k));
            "generator"
        }
        RelationKind::Subdiff(_) => "subdiff",
        RelationKind::Skew(_) => "skew",
        RelationKind::Curve(_) => "scalar_curve",
        RelationKind::Field(_) => "field",
        RelationKind::Product(_) => "product",
        RelationKind::Implicit(_) => "implicit",
    };
    v["kind"] = json!(kind);
    v
}

pub fn compose_files(text_a: &str, text_b: &str, wiring: WiringArg, port: &str) -> Result<Outcome> {
    let (da, db) = (SystemDescription::parse(text_a)?, SystemDescription::parse(text_b)?);
    let (ba, bb) = (da.build()?, db.build()?);
    let name = format!("{}+{}", da.name, db.name);
    let out = match wiring {
        WiringArg::Feedback => {
            if let (Some(sa), Some(sb)) = (&ba.system, &bb.system) {
                if sa.is_explicit() && sb.is_explicit() {
                    let closed = interconnect_feedback(sa, sb)?;
                    let ex = closed.explicit.as_ref().expect("feedback of explicit systems is explicit");
                    let k = ex.k.quadratic_form().map(|q| to_value(&FormView::from(&q)));
                    let relation = relation_view(&closed.relation);
                    return Ok(Outcome::new(
                        json!({
                            "name": name,
                            "wiring": "feedback",
                            "explicit": true,
                            "state_dim": ex.n(),
                            "generator": k,
                            "relation": relation,
                        }),
                        false,
                    ));
                }
            }
            let fc = compose_feedback(&ba.relation, port, &bb.relation, port)?;
            json!({
                "name": name,
                "wiring": "feedback",
                "explicit": false,
                "generator": fc.generator.as_ref().map(|g| to_value(&FormView::from(g))),
                "curvature": fc.curvature.map(|c| format!("{c:?}")),
                "relation": relation_view(&fc.relation),
            })
        }
        WiringArg::Canonical => {
            let rel = compose(&ba.relation, &bb.relation, port)?;
            let witness = qualification_check(&ba.relation, &bb.relation, port)?;
            json!({
                "name": name,
                "wiring": "canonical",
                "relation": relation_view(&rel),
                "qualification": match &witness {
                    Some((f, e)) => json!({"verdict": "witness", "f": vec_of(f), "e": vec_of(e)}),
                    None => json!({"verdict": "failed"}),
                },
            })
        }
    };
    Ok(Outcome::new(out, false))
}

fn error_payload(e: &Error) -> Outcome {
    match e {
        Error::UnboundedObjective { direction } => Outcome {
            json: json!({"error": "unbounded_objective", "direction": direction, "message": e.to_string()}),
            code: EXIT_UNBOUNDED,
        },
        Error::StateRecoveryFailed { system, reason } => {
            Outcome { json: json!({"error": "state_recovery_failed", "system": system, "reason": reason}), code: EXIT_ERROR }
        }
        Error::NonConvergence { residual, iterations } => Outcome {
            json: json!({"error": "non_convergence", "residual": residual, "iterations": iterations}),
            code: EXIT_ERROR,
        },
        Error::MaxIterations { residual } => {
            Outcome { json: json!({"error": "max_iterations", "residual": residual}), code: EXIT_ERROR }
        }
        other => Outcome { json: json!({"error": "solver", "message": other.to_string()}), code: EXIT_ERROR },
    }
}

pub fn steady(text: &str) -> Result<Outcome> {
    let desc = NetworkDescription::parse(text)?;
    let spec = desc.build()?;
    Ok(match solve_network_equilibrium(&spec) {
        Ok(r) => Outcome::new(report_json(&desc.name, &r), false),
        Err(e) => error_payload(&e),
    })
}

fn report_json(name: &str, r: &EquilibriumReport) -> Value {
    let mut v = to_value(r);
    v["name"] = json!(name);
    v
}

pub struct PassivityArgs {
    pub pairs: usize,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Random smooth input: a sum of two sinusoids per channel, sampled finely
/// enough for every RK4 stage at dt/2.
fn random_input(rng: &mut ChaCha8Rng, m: usize, t_end: f64, dt: f64) -> InputSignal {
    if m == 0 {
        return InputSignal::zero(0);
    }
    let params: Vec<[f64; 4]> = (0..m)
        .map(|_| {
            [rng.random_range(-1.0..1.0), rng.random_range(0.2..2.0), rng.random_range(-0.5..0.5), rng.random_range(0.0..6.3)]
        })
        .collect();
    let h = dt / 4.0;
    let steps = (t_end / h).ceil() as usize + 1;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
    let values = times
        .iter()
        .map(|&t| Vector::from_iterator(m, params.iter().map(|p| p[0] * (p[1] * t).sin() + p[2] * (0.5 * t + p[3]).cos())))
        .collect();
    InputSignal::Sampled { times, values }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))
}

fn refusal(h: &Hamiltonian) -> Result<Outcome> {
    let message = "incremental and differential passivity are only certified for quadratic-affine Hamiltonians; \
                   the incremental storage H(x1) - H(x2) - <grad H(x2), x1 - x2> fails for general convex H";
    let obstruction = if h.dim() == 1 { Some(passivity::incremental_storage_obstruction(h, 1.0, 0.0)?) } else { None };
    eprintln!("error: {message}");
    Ok(Outcome {
        json: json!({
            "error": "non_quadratic_hamiltonian",
            "message": message,
            "obstruction": obstruction.map(|v| json!({"x1": 1.0, "x2": 0.0, "value": v})),
        }),
        code: EXIT_ERROR,
    })
}

pub fn passivity_cmd(text: &str, args: &PassivityArgs) -> Result<Outcome> {
    ensure!(args.pairs > 0, "--pairs must be positive");
    ensure!(args.dt.is_finite() && args.dt > 0.0, "--dt must be positive, got {}", args.dt);
    ensure!(args.t_end.is_finite() && args.t_end > args.dt, "--t-end must exceed --dt");
    let desc = SystemDescription::parse(text)?;
    let (sys, _) = explicit_of(&desc)?;
    if !matches!(sys.h, Hamiltonian::Quadratic { .. }) {
        return refusal(&sys.h);
    }
    let method = if sys.is_smooth() { Method::Rk4 } else { Method::Prox };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (n, m) = (sys.n(), sys.m());
    let mut reports: Vec<ResidualReport> = Vec::with_capacity(args.pairs);
    for _ in 0..args.pairs {
        let (x1, x2) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        let (u1, u2) = (random_input(&mut rng, m, args.t_end, args.dt), random_input(&mut rng, m, args.t_end, args.dt));
        let run = |dt: f64| {
            let t1 = integrate(&sys, method, &x1, &u1, args.t_end, dt)?;
            let t2 = integrate(&sys, method, &x2, &u2, args.t_end, dt)?;
            passivity::check_incremental(&sys, &t1, &t2)
        };
        reports.push(passivity::two_grid(run, args.dt)?);
    }
    let differential = if sys.is_smooth() {
        let x0 = random_vec(&mut rng, n);
        let dx0 = random_vec(&mut rng, n);
        let u = random_input(&mut rng, m, args.t_end, args.dt);
        let du = random_input(&mut rng, m, args.t_end, args.dt);
        let run = |dt: f64| {
            let nominal = simulate::integrate_rk4(&sys, &x0, &u, args.t_end, dt)?;
            let var = passivity::variational_integrate(&sys, &nominal, &dx0, &du, &u)?;
            passivity::check_differential(&sys, &nominal, &var)
        };
        Some(passivity::two_grid(run, args.dt)?)
    } else {
        None
    };
    let violated = reports.iter().chain(differential.iter()).any(|r| r.verdict == PassivityVerdict::Violated);
    let verdict = if violated { PassivityVerdict::Violated } else { PassivityVerdict::Holds };
    Ok(Outcome::new(
        json!({
            "name": desc.name,
            "method": method.name(),
            "dt": args.dt,
            "t_end": args.t_end,
            "verdict": verdict,
            "incremental": reports,
            "differential": differential,
        }),
        violated,
    ))
}
