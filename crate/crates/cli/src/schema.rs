//! JSON description files and their conversion to core objects.

use anyhow::{anyhow, ensure, Context, Result};
use iph_core::convexfun::QuadraticForm;
use iph_core::linalg::{self, Mat, Vector};
use iph_core::relations::{LinearRelation, Orientation, Port, ScalarCurve, SubdiffGraph};
use iph_core::steadystate::NetworkSpec;
use iph_core::{ConvexFunction, ExplicitConvexIph, Hamiltonian, InputSignal, IphSystem, MonotoneRelation, Piece, PortSpace};
use serde::{Deserialize, Serialize};

/// Row-major matrix.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDescription {
    pub name: String,
    pub ports: Vec<PortDesc>,
    pub relation: RelationDesc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<HamiltonianDesc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputDesc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortDesc {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelationDesc {
    /// Kernel form K_f f + K_e e = 0.
    Linear {
        k_f: Matrix,
        k_e: Matrix,
    },
    /// f = J e.
    Skew {
        j: Matrix,
    },
    /// Graph of ∂φ. With a Hamiltonian, φ is k(e, u) of the explicit system
    /// ẋ = J∇H − ∂ₑk − c(∇H) − Bu and `j`, `b`, `curves` are allowed.
    Subdiff {
        phi: FunctionDesc,
        #[serde(default = "effort", skip_serializing_if = "is_effort")]
        orientation: Orientation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sign: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        j: Option<Matrix>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Matrix>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        curves: Vec<CurveAt>,
    },
    /// R_f f = R_e e.
    Resistive {
        r_f: Matrix,
        r_e: Matrix,
    },
    ScalarCurve {
        breaks: Vec<f64>,
        coeffs: Matrix,
        orientation: Orientation,
    },
    /// Parts take consecutive ports.
    Product {
        parts: Vec<RelationDesc>,
    },
}

fn effort() -> Orientation {
    Orientation::Effort
}

fn is_effort(o: &Orientation) -> bool {
    *o == Orientation::Effort
}

/// Scalar curve added to the flow of one state coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveAt {
    pub coord: usize,
    pub breaks: Vec<f64>,
    pub coeffs: Matrix,
}

/// Convex expression tree. Box bounds use `null` for ±∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionDesc {
    Quadratic {
        q: Matrix,
        a: Vec<f64>,
        #[serde(default)]
        c: f64,
    },
    WeightedL1 {
        w: Vec<f64>,
    },
    IndicatorAffine {
        a: Matrix,
        b: Vec<f64>,
    },
    IndicatorBox {
        lo: Vec<Option<f64>>,
        hi: Vec<Option<f64>>,
    },
    Zero {
        dim: usize,
    },
    Sum {
        terms: Vec<FunctionDesc>,
    },
    SeparableSum {
        blocks: Vec<FunctionDesc>,
    },
    AffinePrecompose {
        inner: Box<FunctionDesc>,
        l: Matrix,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianDesc {
    QuadraticAffine {
        q: Matrix,
        a: Vec<f64>,
        #[serde(default)]
        c: f64,
    },
    Separable {
        pieces: Vec<PieceDesc>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PieceDesc {
    EvenPower { coef: f64, p: u32 },
    Exp { a: f64, b: f64 },
    Quadratic { q: f64, a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputDesc {
    Constant { value: Vec<f64> },
    PiecewiseConstant { breaks: Vec<f64>, values: Matrix },
    Sampled { times: Vec<f64>, values: Matrix },
}

/// Network of systems for the steady-state solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDescription {
    pub name: String,
    pub systems: Vec<SystemDescription>,
    /// Feedback pairs closed before the network is formed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wiring: Vec<[usize; 2]>,
    pub pi_set: Vec<usize>,
    #[serde(rename = "C")]
    pub c: Matrix,
}

pub fn matrix(rows: &Matrix, ncols: usize, what: &str) -> Result<Mat> {
    for (i, r) in rows.iter().enumerate() {
        ensure!(r.len() == ncols, "{what}: row {i} has {} entries, expected {ncols}", r.len());
    }
    Ok(linalg::from_rows(rows, ncols))
}

/// Matrix whose column count is read from its first row.
pub fn dense(rows: &Matrix, what: &str) -> Result<Mat> {
    let ncols = rows.first().map_or(0, |r| r.len());
    matrix(rows, ncols, what)
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

impl FunctionDesc {
    pub fn build(&self) -> Result<ConvexFunction> {
        Ok(match self {
            FunctionDesc::Quadratic { q, a, c } => ConvexFunction::quadratic(matrix(q, a.len(), "q")?, vector(a), *c)?,
            FunctionDesc::WeightedL1 { w } => ConvexFunction::weighted_l1(vector(w))?,
            FunctionDesc::IndicatorAffine { a, b } => {
                let ncols = a.first().map_or(0, |r| r.len());
                ConvexFunction::indicator_affine(matrix(a, ncols, "a")?, vector(b))?
            }
            FunctionDesc::IndicatorBox { lo, hi } => {
                let lo = Vector::from_iterator(lo.len(), lo.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)));
                let hi = Vector::from_iterator(hi.len(), hi.iter().map(|v| v.unwrap_or(f64::INFINITY)));
                ConvexFunction::indicator_box(lo, hi)?
            }
            FunctionDesc::Zero { dim } => ConvexFunction::zero(*dim),
            FunctionDesc::Sum { terms } => ConvexFunction::sum(terms.iter().map(|t| t.build()).collect::<Result<_>>()?)?,
            FunctionDesc::SeparableSum { blocks } => {
                ConvexFunction::separable_sum(blocks.iter().map(|t| t.build()).collect::<Result<_>>()?)?
            }
            FunctionDesc::AffinePrecompose { inner, l, shift } => {
                let inner = inner.build()?;
                let l = dense(l, "l")?;
                let shift = shift.as_deref().map_or_else(|| Vector::zeros(l.nrows()), vector);
                ConvexFunction::affine_precompose(inner, l, shift)?
            }
        })
    }
}

impl HamiltonianDesc {
    pub fn build(&self) -> Result<Hamiltonian> {
        Ok(match self {
            HamiltonianDesc::QuadraticAffine { q, a, c } => {
                Hamiltonian::quadratic(matrix(q, a.len(), "hamiltonian q")?, vector(a), *c)?
            }
            HamiltonianDesc::Separable { pieces } => Hamiltonian::separable(
                pieces
                    .iter()
                    .map(|p| match *p {
                        PieceDesc::EvenPower { coef, p } => Piece::EvenPower { coef, p },
                        PieceDesc::Exp { a, b } => Piece::Exp { a, b },
                        PieceDesc::Quadratic { q, a } => Piece::Quadratic { q, a },
                    })
                    .collect(),
            )?,
        })
    }
}

impl InputDesc {
    pub fn build(&self) -> Result<InputSignal> {
        let rows = |m: &Matrix| m.iter().map(|r| vector(r)).collect::<Vec<_>>();
        let s = match self {
            InputDesc::Constant { value } => InputSignal::Constant(vector(value)),
            InputDesc::PiecewiseConstant { breaks, values } => {
                InputSignal::PiecewiseConstant { breaks: breaks.clone(), values: rows(values) }
            }
            InputDesc::Sampled { times, values } => InputSignal::Sampled { times: times.clone(), values: rows(values) },
        };
        s.validate()?;
        Ok(s)
    }
}

fn port_space(ports: &[PortDesc]) -> Result<PortSpace> {
    Ok(PortSpace::new(ports.iter().map(|p| Port::new(p.name.clone(), p.dim)).collect())?)
}

fn curve(breaks: &[f64], coeffs: &Matrix, orientation: Orientation) -> Result<ScalarCurve> {
    Ok(ScalarCurve::new(breaks.to_vec(), coeffs.clone(), orientation)?)
}

impl RelationDesc {
    /// Total port dimension implied by the parameters.
    fn dim(&self) -> Result<usize> {
        Ok(match self {
            RelationDesc::Linear { k_f, .. } => k_f.first().map_or(0, |r| r.len()),
            RelationDesc::Skew { j } => j.len(),
            RelationDesc::Subdiff { phi, .. } => phi.build()?.dim(),
            RelationDesc::Resistive { r_f, .. } => r_f.first().map_or(0, |r| r.len()),
            RelationDesc::ScalarCurve { .. } => 1,
            RelationDesc::Product { parts } => parts.iter().map(|p| p.dim()).sum::<Result<usize>>()?,
        })
    }

    pub fn build(&self, ports: &[PortDesc]) -> Result<MonotoneRelation> {
        let space = port_space(ports)?;
        let n = space.dim();
        Ok(match self {
            RelationDesc::Linear { k_f, k_e } => {
                MonotoneRelation::linear(space, LinearRelation::new(matrix(k_f, n, "k_f")?, matrix(k_e, n, "k_e")?)?)?
            }
            RelationDesc::Skew { j } => MonotoneRelation::skew(space, matrix(j, n, "j")?)?,
            RelationDesc::Subdiff { phi, orientation, sign, j, b, curves } => {
                ensure!(j.is_none() && b.is_none() && curves.is_empty(), "`j`, `b` and `curves` need a hamiltonian");
                let phi = phi.build()?;
                let g = match sign {
                    Some(s) => SubdiffGraph::new(phi, s.clone(), *orientation)?,
                    None => SubdiffGraph::plain(phi, *orientation),
                };
                MonotoneRelation::subdiff(space, g)?
            }
            RelationDesc::Resistive { r_f, r_e } => {
                MonotoneRelation::resistive(space, matrix(r_f, n, "r_f")?, matrix(r_e, n, "r_e")?)?
            }
            RelationDesc::ScalarCurve { breaks, coeffs, orientation } => {
                MonotoneRelation::curve(space, curve(breaks, coeffs, *orientation)?)?
            }
            RelationDesc::Product { parts } => {
                let mut rest = ports;
                let mut built = Vec::with_capacity(parts.len());
                for (i, p) in parts.iter().enumerate() {
                    let d = p.dim()?;
                    let mut acc = 0;
                    let mut take = 0;
                    while acc < d && take < rest.len() {
                        acc += rest[take].dim;
                        take += 1;
                    }
                    ensure!(acc == d, "product part {i} of dimension {d} does not align with the ports");
                    built.push(p.build(&rest[..take])?);
                    rest = &rest[take..];
                }
                ensure!(rest.is_empty(), "product parts leave ports unused");
                MonotoneRelation::product(built)?
            }
        })
    }
}

/// A description turned into core objects.
#[derive(Debug, Clone)]
pub struct Built {
    pub relation: MonotoneRelation,
    pub system: Option<IphSystem>,
    pub input: Option<InputSignal>,
}

impl Built {
    pub fn explicit(&self) -> Option<&ExplicitConvexIph> {
        self.system.as_ref().and_then(|s| s.explicit.as_ref())
    }
}

impl SystemDescription {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid system description")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptions serialize")
    }

    pub fn build(&self) -> Result<Built> {
        let input = self.input.as_ref().map(|i| i.build()).transpose()?;
        let Some(hd) = &self.hamiltonian else {
            return Ok(Built { relation: self.relation.build(&self.ports)?, system: None, input });
        };
        let h = hd.build()?;
        let n = h.dim();
        let system = match &self.relation {
            RelationDesc::Subdiff { phi, orientation, sign, j, b, curves } => {
                ensure!(
                    *orientation == Orientation::Effort && sign.is_none(),
                    "an explicit system needs an effort-oriented k without sign"
                );
                let k = phi.build()?;
                ensure!(k.dim() >= n, "k has dimension {} below the state dimension {n}", k.dim());
                let m = k.dim() - n;
                let j = j.as_ref().map(|j| matrix(j, n, "j")).transpose()?;
                let b = b.as_ref().map(|b| matrix(b, m, "b")).transpose()?;
                let curves = curves
                    .iter()
                    .map(|c| Ok((c.coord, curve(&c.breaks, &c.coeffs, Orientation::Effort)?)))
                    .collect::<Result<Vec<_>>>()?;
                let ex = ExplicitConvexIph::new(k, h, j, b)?.with_curves(curves)?;
                let expected = ex.ports();
                let given = port_space(&self.ports)?;
                ensure!(given == expected, "an explicit system needs ports `x` (dim {n}) and, when m > 0, `p` (dim {m})");
                IphSystem::from_explicit(self.name.clone(), ex)?
            }
            other => IphSystem::new(self.name.clone(), other.build(&self.ports)?, h)?,
        };
        if let (Some(i), Some(ex)) = (&input, &system.explicit) {
            ensure!(i.dim() == ex.m(), "input has dimension {}, system has {} inputs", i.dim(), ex.m());
        }
        Ok(Built { relation: system.relation.clone(), system: Some(system), input })
    }
}

impl NetworkDescription {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid network description")
    }

    pub fn build(&self) -> Result<NetworkSpec> {
        let systems = self
            .systems
            .iter()
            .map(|s| s.build()?.system.ok_or_else(|| anyhow!("network member {} has no hamiltonian", s.name)))
            .collect::<Result<Vec<_>>>()?;
        let wiring: Vec<(usize, usize)> = self.wiring.iter().map(|w| (w[0], w[1])).collect();
        // Wired pairs close all their ports, so C spans the unwired inputs.
        let total: usize =
            systems.iter().enumerate().filter(|(i, _)| !self.wiring.iter().any(|w| w.contains(i))).map(|(_, s)| s.m()).sum();
        let c = matrix(&self.c, total, "C")?;
        Ok(NetworkSpec::wired(systems, &wiring, self.pi_set.clone(), c)?)
    }
}

/// JSON view of a quadratic form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormView {
    pub q: Matrix,
    pub a: Vec<f64>,
    pub c: f64,
    pub cons_a: Matrix,
    pub cons_b: Vec<f64>,
}

impl From<&QuadraticForm> for FormView {
    fn from(f: &QuadraticForm) -> Self {
        FormView {
            q: linalg::to_rows(&f.q),
            a: f.a.iter().copied().collect(),
            c: f.c,
            cons_a: linalg::to_rows(&f.cons_a),
            cons_b: f.cons_b.iter().copied().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"name":"s","ports":[{"name":"p","dim":1}],"relation":{"kind":"skew","j":[[0.0]]},"extra":1}"#;
        assert!(SystemDescription::parse(text).is_err());
        let text = r#"{"name":"s","ports":[{"name":"p","dim":1}],"relation":{"kind":"skew","j":[[0.0]],"x":2}}"#;
        assert!(SystemDescription::parse(text).is_err());
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        assert!(matrix(&vec![vec![1.0, 2.0], vec![3.0]], 2, "m").is_err());
    }

    #[test]
    fn product_parts_take_consecutive_ports() {
        let d = SystemDescription {
            name: "prod".into(),
            ports: vec![PortDesc { name: "a".into(), dim: 1 }, PortDesc { name: "b".into(), dim: 2 }],
            relation: RelationDesc::Product {
                parts: vec![
                    RelationDesc::Subdiff {
                        phi: FunctionDesc::WeightedL1 { w: vec![1.0] },
                        orientation: Orientation::Flow,
                        sign: None,
                        j: None,
                        b: None,
                        curves: vec![],
                    },
                    RelationDesc::Skew { j: vec![vec![0.0, 1.0], vec![-1.0, 0.0]] },
                ],
            },
            hamiltonian: None,
            input: None,
        };
        assert_eq!(d.build().unwrap().relation.dim(), 3);
    }
}
