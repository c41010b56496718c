use std::sync::Arc;
use std::time::{Duration, Instant};

use super::context::Ctx;
use super::integral::Coefficients;
use super::{Gate, IdentityError, IdentityId, PointwiseId, Requirement, MAX_M, PRECONDITION_TOLERANCE};
use crate::diffops::{Calculus, DiffopsError, VectorField, DEFAULT_KILLING_TOLERANCE};
use crate::expr::{Expr, Tape};
use crate::geometry::ChartMetric;
use crate::measure::{boundary_nodes, Domain, QuadratureSpec};

/// Largest `l` accepted by the pointwise lemmas.
pub const MAX_L: usize = 2 * MAX_M;

/// One pointwise identity on a metric, evaluated at a list of points.
#[derive(Debug, Clone)]
pub struct PointwiseCase {
    pub id: PointwiseId,
    pub metric: Arc<ChartMetric>,
    pub u: Option<Expr>,
    pub v: Option<Expr>,
    pub h: Option<VectorField>,
    /// Lagrangian for AB8, with `∇u` in `Var(n..2n)` and `∇v` in `Var(2n..3n)`.
    pub f: Option<Expr>,
    pub l: usize,
    pub m: usize,
    pub points: Vec<Vec<f64>>,
    /// Domain whose boundary nodes V1 is checked on.
    pub domain: Option<Domain>,
    /// Boundary quadrature order used to place V1 nodes.
    pub boundary_order: usize,
    pub killing_tolerance: f64,
    pub coefficients: Coefficients,
}

impl PointwiseCase {
    pub fn new(id: PointwiseId, metric: Arc<ChartMetric>) -> Self {
        PointwiseCase {
            id,
            metric,
            u: None,
            v: None,
            h: None,
            f: None,
            l: 0,
            m: 1,
            points: Vec::new(),
            domain: None,
            boundary_order: 6,
            killing_tolerance: DEFAULT_KILLING_TOLERANCE,
            coefficients: Coefficients::Derived,
        }
    }

    pub fn with_u(mut self, u: Expr) -> Self {
        self.u = Some(u);
        self
    }

    pub fn with_v(mut self, v: Expr) -> Self {
        self.v = Some(v);
        self
    }

    pub fn with_h(mut self, h: VectorField) -> Self {
        self.h = Some(h);
        self
    }

    pub fn with_f(mut self, f: Expr) -> Self {
        self.f = Some(f);
        self
    }

    pub fn with_l(mut self, l: usize) -> Self {
        self.l = l;
        self
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn with_points(mut self, points: Vec<Vec<f64>>) -> Self {
        self.points = points;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn with_coefficients(mut self, coefficients: Coefficients) -> Self {
        self.coefficients = coefficients;
        self
    }

    fn id(&self) -> IdentityId {
        IdentityId::Pointwise(self.id)
    }

    fn need<'a, T>(&self, value: &'a Option<T>, input: &'static str) -> Result<&'a T, IdentityError> {
        value.as_ref().ok_or(IdentityError::Missing { id: self.id(), input })
    }
}

/// Residuals of a pointwise identity.
#[derive(Debug, Clone)]
pub struct PointwiseReport {
    pub id: PointwiseId,
    /// Where the identity was evaluated (chart points, or boundary nodes for V1).
    pub points: Vec<Vec<f64>>,
    /// Left and right sides of the worst component at each point.
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Max over components of `|lhs − rhs|` at each point.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub worst: usize,
    pub gate: Option<Gate>,
    pub wall_time: Duration,
    pub notes: Vec<String>,
}

impl PointwiseReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_residual <= tolerance
    }
}

pub(crate) fn check_gate(
    id: IdentityId,
    requirement: Requirement,
    h: Option<&VectorField>,
    points: &[Vec<f64>],
    tolerance: f64,
) -> Result<Option<Gate>, IdentityError> {
    if requirement == Requirement::None {
        return Ok(None);
    }
    let h = h.ok_or(IdentityError::Missing { id, input: "h" })?;
    let diag = crate::diffops::killing_diagnostics(h, points)?;
    let gate = Gate::from_diagnostics(&diag);
    if !diag.is_conformal(tolerance) {
        return Err(IdentityError::NotConformal { id, deviation: diag.deviation, tolerance });
    }
    if requirement == Requirement::Homothety && !diag.is_homothety_normalized {
        let n = h.metric().n() as f64;
        let worst = diag.div_h.iter().fold(0.0f64, |acc, d| acc.max((d - n).abs()));
        return Err(IdentityError::NotHomothety { id, detail: format!("max |div h − n| = {worst:e}") });
    }
    Ok(Some(gate))
}

/// `w^i` with `∇_i w^i = Δ^m u Δ^m η + Δ^m v Δ^m φ − Δ^{2m}u η − Δ^{2m}v φ`,
/// where `η = (h,∇v)` and `φ = (h,∇u)`. Holds for any `h`.
pub fn polyharmonic_flux(
    calculus: &mut Calculus,
    u: &Expr,
    v: &Expr,
    h: &[Expr],
    m: usize,
) -> Result<Vec<Expr>, DiffopsError> {
    let du = calculus.gradient(u);
    let dv = calculus.gradient(v);
    let eta = Expr::dot(h, &dv);
    let phi = Expr::dot(h, &du);
    let n = calculus.n();
    let mut w: Vec<Vec<Expr>> = vec![Vec::new(); n];
    for (a, b) in [(&eta, u), (&phi, v)] {
        for s in 0..m {
            let ls = calculus.polyharmonic(a, s)?;
            let lb = calculus.polyharmonic(b, 2 * m - 1 - s)?;
            let grad_ls = calculus.gradient_vector(&ls);
            let grad_lb = calculus.gradient_vector(&lb);
            for i in 0..n {
                w[i].push(-(&ls * &grad_lb[i]));
                w[i].push(&grad_ls[i] * &lb);
            }
        }
    }
    Ok(w.into_iter().map(Expr::sum).collect())
}

/// Build `(lhs, rhs)` component lists for a non-boundary id.
fn sides(case: &PointwiseCase) -> Result<(Vec<Expr>, Vec<Expr>, Vec<String>), IdentityError> {
    let h = case.h.as_ref().map(|h| h.components.clone());
    let mut ctx = Ctx::new(case.metric.clone(), h.as_deref());
    let n = ctx.n;
    let mut notes = Vec::new();
    let half_c = (2.0 - n as f64) / 2.0;
    let (lhs, rhs) = match case.id {
        PointwiseId::AB8 => {
            let f = case.need(&case.f, "F")?;
            let u = case.need(&case.u, "u")?;
            let v = case.need(&case.v, "v")?;
            case.need(&case.h, "h")?;
            let (fu, fv) = f_gradients(&mut ctx.c, f, u, v);
            let hh = ctx.h.clone();
            let h_fv = ctx.c.inner(&hh, &fv);
            let h_fu = ctx.c.inner(&hh, &fu);
            let lhs = ctx.c.divergence(&fu) * &h_fv + ctx.c.divergence(&fv) * &h_fu;
            let lie = ctx.c.lie_derivative_metric(&hh);
            let lie_term = Expr::sum((0..n * n).map(|ij| &lie[ij] * &fu[ij / n] * &fv[ij % n]));
            let h_low = ctx.c.lower(&hh);
            let transport = transport_term(&mut ctx.c, &h_low, &fu, &fv);
            let total: Vec<Expr> = (0..n).map(|i| &fu[i] * &h_fv + &fv[i] * &h_fu).collect();
            let div_total = ctx.c.divergence(&total);
            (vec![lhs], vec![Expr::sum([-lie_term, -transport, div_total])])
        }
        PointwiseId::N17 => {
            let u = case.need(&case.u, "u")?;
            let v = case.need(&case.v, "v")?;
            case.need(&case.h, "h")?;
            let m = check_m(case)?;
            let hh = ctx.h.clone();
            let eta = ctx.h_dot(v);
            let phi = ctx.h_dot(u);
            let lhs = ctx.lap(u, m)? * ctx.lap(&eta, m)? + ctx.lap(v, m)? * ctx.lap(&phi, m)?;
            let w = polyharmonic_flux(&mut ctx.c, u, v, &hh, m)?;
            let rhs = ctx.lap(u, 2 * m)? * &eta + ctx.lap(v, 2 * m)? * &phi + ctx.c.divergence(&w);
            (vec![lhs], vec![rhs])
        }
        PointwiseId::N20 => {
            case.need(&case.h, "h")?;
            let hh = ctx.h.clone();
            let lap_h = ctx.c.vector_laplacian(&hh);
            let metric = ctx.metric();
            let mu = ctx.mu();
            let dmu = ctx.c.gradient(&mu);
            let grad_mu = ctx.c.raise(&dmu);
            let lhs = (0..n)
                .map(|k| &lap_h[k] + Expr::sum((0..n).map(|s| metric.ricci_mixed(k, s) * &hh[s])))
                .collect();
            let rhs = grad_mu.iter().map(|g| half_c * g).collect();
            (lhs, rhs)
        }
        PointwiseId::N21 => {
            let v = case.need(&case.v, "v")?;
            case.need(&case.h, "h")?;
            let l = check_l(case)?;
            let lv = ctx.lap(v, l)?;
            let hess = ctx.c.hessian(&lv);
            let hh = ctx.h.clone();
            let gh = ctx.c.vector_gradient_raised(&hh);
            // ∇^i h^k ∇_i ∇_k f
            let lhs = 2.0 * Expr::sum((0..n * n).map(|ik| &gh[ik] * &hess[ik]));
            let rhs = ctx.mu() * ctx.lap(v, l + 1)?;
            (vec![lhs], vec![rhs])
        }
        PointwiseId::N22 | PointwiseId::D4 => {
            let v = case.need(&case.v, "v")?;
            let l = check_l(case)?;
            let lv = ctx.lap(v, l)?;
            let grad = ctx.c.gradient(&lv);
            let lhs = if case.id == PointwiseId::N22 {
                ctx.c.covector_laplacian(&grad)
            } else {
                let up = ctx.c.raise(&grad);
                ctx.c.divergence_of_gradient(&up)
            };
            let next = ctx.lap(v, l + 1)?;
            let grad_next = ctx.c.gradient(&next);
            let metric = ctx.metric();
            let rhs = (0..n)
                .map(|k| &grad_next[k] + Expr::sum((0..n).map(|s| metric.ricci_mixed(s, k) * &grad[s])))
                .collect();
            (lhs, rhs)
        }
        PointwiseId::N24 | PointwiseId::N25 => {
            let f = if case.id == PointwiseId::N24 { case.need(&case.v, "v")? } else { case.need(&case.u, "u")? };
            case.need(&case.h, "h")?;
            let l = check_l(case)?;
            let eta = ctx.h_dot(f);
            let lhs = ctx.lap(&eta, l)?;
            let lf = ctx.lap(f, l)?;
            let rhs = ctx.eta_value(&lf, l);
            (vec![lhs], vec![rhs])
        }
        PointwiseId::N34 | PointwiseId::N35 => {
            let f = if case.id == PointwiseId::N34 { case.need(&case.v, "v")? } else { case.need(&case.u, "u")? };
            case.need(&case.h, "h")?;
            let coeff = match case.coefficients {
                Coefficients::Derived => half_c,
                Coefficients::Literal => {
                    notes.push("gradient coupling coefficient (2−n)/n".into());
                    (2.0 - n as f64) / n as f64
                }
            };
            let eta = ctx.h_dot(f);
            let lhs = ctx.lap(&eta, 1)?;
            let mu = ctx.mu();
            let lf = ctx.lap(f, 1)?;
            let transport = ctx.h_dot(&lf);
            let coupling = ctx.grad_inner(&mu, f);
            let rhs = Expr::sum([&mu * &lf, transport, coeff * coupling]);
            (vec![lhs], vec![rhs])
        }
        PointwiseId::N37 => {
            case.need(&case.h, "h")?;
            let mu = ctx.mu();
            let lhs = ctx.lap(&mu, 1)?;
            let rhs = -(1.0 / (n as f64 - 1.0)) * ctx.curvature_source();
            (vec![lhs], vec![rhs])
        }
        PointwiseId::V1 => unreachable!("boundary id handled separately"),
    };
    Ok((lhs, rhs, notes))
}

fn check_l(case: &PointwiseCase) -> Result<usize, IdentityError> {
    if case.l > MAX_L {
        return Err(IdentityError::Parameter { id: case.id(), reason: format!("l = {} exceeds the cap {MAX_L}", case.l) });
    }
    Ok(case.l)
}

fn check_m(case: &PointwiseCase) -> Result<usize, IdentityError> {
    if case.m == 0 || case.m > MAX_M {
        return Err(IdentityError::Parameter { id: case.id(), reason: format!("m = {} must be in 1..={MAX_M}", case.m) });
    }
    Ok(case.m)
}

/// `F_u^i = ∂F/∂p_i` and `F_v^i = ∂F/∂q_i` with `p = ∇u`, `q = ∇v` substituted.
pub(crate) fn f_gradients(c: &mut Calculus, f: &Expr, u: &Expr, v: &Expr) -> (Vec<Expr>, Vec<Expr>) {
    let n = c.n();
    let du = c.gradient(u);
    let dv = c.gradient(v);
    let mut slots: Vec<Option<Expr>> = vec![None; n];
    slots.extend(du.into_iter().map(Some));
    slots.extend(dv.into_iter().map(Some));
    let fu = (0..n).map(|i| c.partial(f, n + i).substitute(&slots)).collect();
    let fv = (0..n).map(|i| c.partial(f, 2 * n + i).substitute(&slots)).collect();
    (fu, fv)
}

/// `h_j (a^i ∇_i b^j + b^i ∇_i a^j)`.
pub(crate) fn transport_term(c: &mut Calculus, h_low: &[Expr], a: &[Expr], b: &[Expr]) -> Expr {
    one_sided_transport(c, h_low, a, b) + one_sided_transport(c, h_low, b, a)
}

/// `h_j a^i ∇_i b^j`.
pub(crate) fn one_sided_transport(c: &mut Calculus, h_low: &[Expr], a: &[Expr], b: &[Expr]) -> Expr {
    let n = c.n();
    let grad_b = c.vector_gradient(b);
    Expr::sum((0..n * n).map(|ji| {
        let (j, i) = (ji / n, ji % n);
        &h_low[j] * &a[i] * grad_b.get(&[j, i])
    }))
}

/// Evaluate a pointwise identity at every point of the case.
pub fn evaluate_pointwise(case: &PointwiseCase) -> Result<PointwiseReport, IdentityError> {
    let start = Instant::now();
    if case.id == PointwiseId::V1 {
        return evaluate_v1(case, start);
    }
    if case.points.is_empty() {
        return Err(IdentityError::Missing { id: case.id(), input: "points" });
    }
    case.metric.validate(&case.points)?;
    let gate = check_gate(case.id(), case.id.requirement(), case.h.as_ref(), &case.points, case.killing_tolerance)?;
    let (lhs, rhs, notes) = sides(case)?;
    let k = lhs.len();
    let tape = Tape::compile(&[lhs, rhs].concat());
    let mut scratch = Vec::new();
    let mut out = vec![0.0; 2 * k];
    let mut report = empty_report(case.id, gate, notes);
    for x in &case.points {
        tape.eval_into(x, &mut scratch, &mut out)?;
        push_worst(&mut report, x.clone(), &out[..k], &out[k..]);
    }
    report.wall_time = start.elapsed();
    Ok(report)
}

fn empty_report(id: PointwiseId, gate: Option<Gate>, notes: Vec<String>) -> PointwiseReport {
    PointwiseReport {
        id,
        points: Vec::new(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        residuals: Vec::new(),
        max_residual: 0.0,
        worst: 0,
        gate,
        wall_time: Duration::ZERO,
        notes,
    }
}

fn push_worst(report: &mut PointwiseReport, x: Vec<f64>, lhs: &[f64], rhs: &[f64]) {
    let (mut best, mut res) = (0, -1.0);
    for c in 0..lhs.len() {
        let r = (lhs[c] - rhs[c]).abs();
        if r > res || r.is_nan() {
            best = c;
            res = r;
            if r.is_nan() {
                break;
            }
        }
    }
    if res > report.max_residual || res.is_nan() {
        report.max_residual = res;
        report.worst = report.points.len();
    }
    report.points.push(x);
    report.lhs.push(lhs[best]);
    report.rhs.push(rhs[best]);
    report.residuals.push(res);
}

fn evaluate_v1(case: &PointwiseCase, start: Instant) -> Result<PointwiseReport, IdentityError> {
    let id = case.id();
    let u = case.need(&case.u, "u")?;
    let domain = case.need(&case.domain, "domain")?;
    let n = case.metric.n();
    let spec = QuadratureSpec::uniform(case.boundary_order)?;
    let nodes = boundary_nodes(domain, &case.metric, &spec)?;
    let mut c = Calculus::new(case.metric.clone());
    let du = c.gradient(u);
    let nu: Vec<Expr> = (0..n).map(|i| Expr::var(n + i)).collect();
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for k in 0..n {
        for j in (k + 1)..n {
            lhs.push(&du[k] * &nu[j]);
            rhs.push(&du[j] * &nu[k]);
        }
    }
    let p = lhs.len();
    let mut roots = vec![u.clone()];
    roots.extend(lhs);
    roots.extend(rhs);
    let tape = Tape::compile(&roots);
    let mut scratch = Vec::new();
    let mut out = vec![0.0; 1 + 2 * p];
    let mut report = empty_report(case.id, None, Vec::new());
    let mut max_u = 0.0f64;
    for (node, _) in &nodes {
        let input = [node.x.as_slice(), node.normal.as_slice()].concat();
        tape.eval_into(&input, &mut scratch, &mut out)?;
        max_u = max_u.max(out[0].abs());
        if p == 0 {
            push_worst(&mut report, node.x.clone(), &[0.0], &[0.0]);
        } else {
            push_worst(&mut report, node.x.clone(), &out[1..1 + p], &out[1 + p..]);
        }
    }
    if max_u > PRECONDITION_TOLERANCE {
        return Err(IdentityError::BoundaryData { id, quantity: "u", max: max_u, tolerance: PRECONDITION_TOLERANCE });
    }
    report.wall_time = start.elapsed();
    Ok(report)
}
