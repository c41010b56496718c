use std::sync::Arc;
use std::time::{Duration, Instant};

use super::context::Ctx;
use super::pointwise::{check_gate, f_gradients, one_sided_transport};
use super::{
    relative_residual, Gate, IdentityError, IdentityId, IntegralId, Requirement, GATE_SAMPLES, MAX_M,
    PRECONDITION_TOLERANCE,
};
use crate::diffops::{VectorField, DEFAULT_KILLING_TOLERANCE};
use crate::expr::{Expr, Tape};
use crate::geometry::ChartMetric;
use crate::measure::{boundary_nodes, integrate_boundary, integrate_volume, pairwise_sum, Domain, QuadratureSpec};
use crate::rng::sample_interior;

/// Which coefficients to use where two forms of an identity circulate.
///
/// `Derived` is the form obtained by carrying the conformal factor through
/// the integrations by parts: `(2−n)/2` in front of the `∇μ` terms of N38,
/// N39 and the gradient coupling of N34, N35. `Literal` uses `1` for the N38
/// and N39 terms and `(2−n)/n` for N34, N35. The two agree when `μ` is
/// constant and differ otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coefficients {
    #[default]
    Derived,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Volume,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lhs,
    Rhs,
    /// Integrals used only by sub-checks.
    Auxiliary,
}

/// One integral identity on a concrete scenario.
#[derive(Debug, Clone)]
pub struct IntegralCase {
    pub id: IntegralId,
    pub metric: Arc<ChartMetric>,
    pub domain: Domain,
    pub u: Expr,
    /// Second function; ignored by the single-function ids.
    pub v: Option<Expr>,
    pub h: Option<VectorField>,
    /// Lagrangian for N9: `∇u` slots `Var(n..2n)`, `∇v` slots `Var(2n..3n)`.
    pub f: Option<Expr>,
    /// Nonlinearity for W7 in `s = Var(0)`, `t = Var(1)`.
    pub g: Option<Expr>,
    pub a: f64,
    pub m: usize,
    pub quadrature: QuadratureSpec,
    pub killing_tolerance: f64,
    pub coefficients: Coefficients,
    /// Seed for gate sample points.
    pub seed: u64,
}

impl IntegralCase {
    pub fn new(id: IntegralId, metric: Arc<ChartMetric>, domain: Domain, u: Expr) -> Self {
        IntegralCase {
            id,
            metric,
            domain,
            u,
            v: None,
            h: None,
            f: None,
            g: None,
            a: 0.5,
            m: 1,
            quadrature: QuadratureSpec::default(),
            killing_tolerance: DEFAULT_KILLING_TOLERANCE,
            coefficients: Coefficients::Derived,
            seed: 0,
        }
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

    pub fn with_g(mut self, g: Expr, a: f64) -> Self {
        self.g = Some(g);
        self.a = a;
        self
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn with_quadrature(mut self, quadrature: QuadratureSpec) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn with_coefficients(mut self, coefficients: Coefficients) -> Self {
        self.coefficients = coefficients;
        self
    }

    /// The same scenario for another id.
    pub fn with_id(mut self, id: IntegralId) -> Self {
        self.id = id;
        self
    }

    /// Exchange `u` and `v`, and the `∇u`/`∇v` slots of `F`.
    pub fn swapped(&self) -> IntegralCase {
        let mut out = self.clone();
        if let Some(v) = &self.v {
            out.u = v.clone();
            out.v = Some(self.u.clone());
        }
        if let Some(f) = &self.f {
            let n = self.metric.n();
            let mut slots: Vec<Option<Expr>> = vec![None; n];
            slots.extend((0..n).map(|i| Some(Expr::var(2 * n + i))));
            slots.extend((0..n).map(|i| Some(Expr::var(n + i))));
            out.f = Some(f.substitute(&slots));
        }
        out
    }

    fn id(&self) -> IdentityId {
        IdentityId::Integral(self.id)
    }

    fn second(&self) -> Result<&Expr, IdentityError> {
        self.v.as_ref().ok_or(IdentityError::Missing { id: self.id(), input: "v" })
    }
}

/// A reported integral term: `value = coefficient × integral`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermValue {
    pub label: String,
    pub side: Side,
    pub region: Region,
    pub coefficient: f64,
    pub integral: f64,
    pub value: f64,
    /// Term carries `μ` or its derivatives, so it vanishes for isometric `h`.
    pub involves_mu: bool,
}

/// A secondary equality checked on the same quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct SubCheck {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_residual: f64,
    pub rel_residual: f64,
}

#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub id: IdentityId,
    pub lhs: f64,
    pub rhs: f64,
    pub terms: Vec<TermValue>,
    pub abs_residual: f64,
    pub rel_residual: f64,
    pub quadrature: Option<QuadratureSpec>,
    pub wall_time: Duration,
    pub sub_checks: Vec<SubCheck>,
    pub notes: Vec<String>,
    pub gate: Option<Gate>,
}

impl IdentityReport {
    /// Relative residual of the identity and of every sub-check within `tolerance`.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.rel_residual <= tolerance && self.sub_checks.iter().all(|c| c.rel_residual <= tolerance)
    }

    pub fn term(&self, label: &str) -> Option<&TermValue> {
        self.terms.iter().find(|t| t.label == label)
    }

    /// Largest `|value|` among the terms that carry `μ`.
    pub fn max_mu_term(&self) -> f64 {
        self.terms.iter().filter(|t| t.involves_mu).fold(0.0, |acc, t| acc.max(t.value.abs()))
    }
}

struct Term {
    label: String,
    side: Side,
    coeff: f64,
    region: Region,
    integrand: Expr,
    involves_mu: bool,
}

struct CheckDef {
    label: String,
    lhs: Vec<(usize, f64)>,
    rhs: Vec<(usize, f64)>,
}

#[derive(Default)]
struct Plan {
    terms: Vec<Term>,
    checks: Vec<CheckDef>,
    notes: Vec<String>,
}

impl Plan {
    fn push(&mut self, side: Side, coeff: f64, region: Region, label: impl Into<String>, integrand: Expr) -> usize {
        self.terms.push(Term { label: label.into(), side, coeff, region, integrand, involves_mu: false });
        self.terms.len() - 1
    }

    fn vol(&mut self, side: Side, coeff: f64, label: impl Into<String>, integrand: Expr) -> usize {
        self.push(side, coeff, Region::Volume, label, integrand)
    }

    fn bdy(&mut self, side: Side, coeff: f64, label: impl Into<String>, integrand: Expr) -> usize {
        self.push(side, coeff, Region::Boundary, label, integrand)
    }

    fn mu_term(&mut self, index: usize) {
        self.terms[index].involves_mu = true;
    }
}

fn check_m(case: &IntegralCase) -> Result<usize, IdentityError> {
    if case.m == 0 || case.m > MAX_M {
        return Err(IdentityError::Parameter { id: case.id(), reason: format!("m = {} must be in 1..={MAX_M}", case.m) });
    }
    Ok(case.m)
}

fn pow_label(base: &str, k: usize, f: &str) -> String {
    match k {
        0 => f.to_string(),
        1 => format!("{base}{f}"),
        _ => format!("{base}^{k}{f}"),
    }
}

/// Boundary groups of the polyharmonic identities for one ordered pair:
/// `+(2lΔ^l b + h^k∇_kΔ^l b)(∇Δ^{2m−1−l}a, ν)` and
/// `−(2l(∇Δ^l b, ν) + ∇^ih^k∇_kΔ^l b ν_i + h^k∇^i∇_kΔ^l b ν_i)Δ^{2m−1−l}a`.
fn poly_groups(
    plan: &mut Plan,
    ctx: &mut Ctx,
    a: (&Expr, &str),
    b: (&Expr, &str),
    m: usize,
    scale: f64,
) -> Result<(), IdentityError> {
    for l in 0..m {
        let lb = ctx.lap(b.0, l)?;
        let la = ctx.lap(a.0, 2 * m - 1 - l)?;
        let value = ctx.eta_value(&lb, l);
        let flux_a = ctx.flux(&la);
        let lb_s = pow_label("Δ", l, b.1);
        let la_s = pow_label("Δ", 2 * m - 1 - l, a.1);
        plan.bdy(
            Side::Rhs,
            scale,
            format!("∫∂(2l·{lb_s} + h^k∇_k{lb_s})(∇{la_s},ν) [l={l}]"),
            value * flux_a,
        );
        let eta_flux = ctx.eta_flux(&lb, l);
        plan.bdy(
            Side::Rhs,
            -scale,
            format!("−∫∂(2l(∇{lb_s},ν) + ∇^ih^k∇_k{lb_s}ν_i + h^k∇^i∇_k{lb_s}ν_i)·{la_s} [l={l}]"),
            eta_flux * la,
        );
    }
    Ok(())
}

/// `Σ_l ∫∂Δ^{m+l}a (∇Δ^{m−l−1}b, ν) − Σ_l ∫∂Δ^{m−l−1}b (∇Δ^{m+l}a, ν)`.
fn parts_sums(
    plan: &mut Plan,
    ctx: &mut Ctx,
    a: (&Expr, &str),
    b: (&Expr, &str),
    m: usize,
    scale: f64,
    prefix: &str,
) -> Result<(), IdentityError> {
    for l in 0..m {
        let hi = ctx.lap(a.0, m + l)?;
        let lo = ctx.lap(b.0, m - l - 1)?;
        let hi_s = pow_label("Δ", m + l, a.1);
        let lo_s = pow_label("Δ", m - l - 1, b.1);
        let flux_lo = ctx.flux(&lo);
        let flux_hi = ctx.flux(&hi);
        plan.bdy(Side::Rhs, scale, format!("{prefix}∫∂{hi_s}(∇{lo_s},ν) [l={l}]"), &hi * flux_lo);
        let neg = if prefix.is_empty() { "−".to_string() } else { format!("−{prefix}") };
        plan.bdy(Side::Rhs, -scale, format!("{neg}∫∂{lo_s}(∇{hi_s},ν) [l={l}]"), lo * flux_hi);
    }
    Ok(())
}

fn build_plan(case: &IntegralCase) -> Result<Plan, IdentityError> {
    let id = case.id();
    let h = case.h.as_ref().map(|h| h.components.clone());
    if h.is_none() && case.id != IntegralId::PartsN29 {
        return Err(IdentityError::Missing { id, input: "h" });
    }
    let mut ctx = Ctx::new(case.metric.clone(), h.as_deref());
    let n = ctx.n;
    let nf = n as f64;
    let u = case.u.clone();
    let mut plan = Plan::default();
    use Side::{Lhs, Rhs};
    match case.id {
        IntegralId::GeneralRellichN9 => {
            let v = case.second()?.clone();
            let f = case.f.as_ref().ok_or(IdentityError::Missing { id, input: "F" })?;
            let (fu, fv) = f_gradients(&mut ctx.c, f, &u, &v);
            let hh = ctx.h.clone();
            let h_fu = ctx.c.inner(&hh, &fu);
            let h_fv = ctx.c.inner(&hh, &fv);
            let div_fu = ctx.c.divergence(&fu);
            let div_fv = ctx.c.divergence(&fv);
            plan.vol(Lhs, 1.0, "∫div F_p (h,F_q)", div_fu * &h_fv);
            plan.vol(Lhs, 1.0, "∫div F_q (h,F_p)", div_fv * &h_fu);
            let lie = ctx.c.lie_derivative_metric(&hh);
            let lie_term = Expr::sum((0..n * n).map(|ij| &lie[ij] * &fu[ij / n] * &fv[ij % n]));
            plan.vol(Rhs, -1.0, "−∫L_h g_ij F_u^i F_v^j", lie_term);
            let h_low = ctx.c.lower(&hh);
            let t1 = one_sided_transport(&mut ctx.c, &h_low, &fu, &fv);
            let t2 = one_sided_transport(&mut ctx.c, &h_low, &fv, &fu);
            plan.vol(Rhs, -1.0, "−∫h_j F_u^i ∇_i F_v^j", t1);
            plan.vol(Rhs, -1.0, "−∫h_j F_v^i ∇_i F_u^j", t2);
            let nu = ctx.nu();
            plan.bdy(Rhs, 1.0, "∫∂(F_p,ν)(h,F_q)", Expr::dot(&fu, &nu) * &h_fv);
            plan.bdy(Rhs, 1.0, "∫∂(F_q,ν)(h,F_p)", Expr::dot(&fv, &nu) * &h_fu);
        }
        IntegralId::LaplaceRellichN13 => {
            let v = case.second()?.clone();
            let eta = ctx.h_dot(&v);
            let phi = ctx.h_dot(&u);
            let lu = ctx.lap(&u, 1)?;
            let lv = ctx.lap(&v, 1)?;
            plan.vol(Lhs, 1.0, "∫Δu (h,∇v)", &lu * &eta);
            plan.vol(Lhs, 1.0, "∫Δv (h,∇u)", &lv * &phi);
            let hh = ctx.h.clone();
            let div_h = ctx.c.divergence(&hh);
            let guv = ctx.grad_inner(&u, &v);
            plan.vol(Rhs, (nf - 2.0) / nf, "(n−2)/n ∫div h (∇u,∇v)", div_h * &guv);
            let fu = ctx.flux(&u);
            let fv = ctx.flux(&v);
            plan.bdy(Rhs, 1.0, "∫∂∂_νu (h,∇v)", fu * &eta);
            plan.bdy(Rhs, 1.0, "∫∂∂_νv (h,∇u)", fv * &phi);
            plan.bdy(Rhs, -1.0, "−∫∂(∇u,∇v)(h,ν)", guv * ctx.h_nu());
        }
        IntegralId::PolyCompactN28 | IntegralId::PolyN30 => {
            let v = case.second()?.clone();
            let m = check_m(case)?;
            let k = 4.0 * m as f64 - nf;
            let eta = ctx.h_dot(&v);
            let phi = ctx.h_dot(&u);
            let l2u = ctx.lap(&u, 2 * m)?;
            let l2v = ctx.lap(&v, 2 * m)?;
            plan.vol(Lhs, 1.0, "∫Δ^{2m}u (h,∇v)", &l2u * eta);
            plan.vol(Lhs, 1.0, "∫Δ^{2m}v (h,∇u)", l2v * phi);
            let lmu = ctx.lap(&u, m)?;
            let lmv = ctx.lap(&v, m)?;
            if case.id == IntegralId::PolyCompactN28 {
                plan.vol(Rhs, k, "(4m−n)∫Δ^m u Δ^m v", &lmu * &lmv);
            } else {
                plan.vol(Rhs, k, "(4m−n)∫Δ^{2m}u·v", &l2u * &v);
            }
            plan.bdy(Rhs, 1.0, "∫∂Δ^m u Δ^m v (h,ν)", lmu * lmv * ctx.h_nu());
            if case.id == IntegralId::PolyN30 {
                parts_sums(&mut plan, &mut ctx, (&u, "u"), (&v, "v"), m, k, "(4m−n)")?;
            }
            poly_groups(&mut plan, &mut ctx, (&u, "u"), (&v, "v"), m, 1.0)?;
            poly_groups(&mut plan, &mut ctx, (&v, "v"), (&u, "u"), m, 1.0)?;
        }
        IntegralId::PolySingleN31 => {
            let m = check_m(case)?;
            let k = (4.0 * m as f64 - nf) / 2.0;
            let phi = ctx.h_dot(&u);
            let l2u = ctx.lap(&u, 2 * m)?;
            plan.vol(Lhs, 1.0, "∫Δ^{2m}u (h,∇u)", &l2u * phi);
            plan.vol(Rhs, k, "(4m−n)/2 ∫Δ^{2m}u·u", &l2u * &u);
            let lmu = ctx.lap(&u, m)?;
            plan.bdy(Rhs, 0.5, "½∫∂(Δ^m u)²(h,ν)", Expr::square(lmu) * ctx.h_nu());
            parts_sums(&mut plan, &mut ctx, (&u, "u"), (&u, "u"), m, k, "(4m−n)/2 ")?;
            poly_groups(&mut plan, &mut ctx, (&u, "u"), (&u, "u"), m, 1.0)?;
        }
        IntegralId::PartsN29 => {
            let v = case.second()?.clone();
            let m = check_m(case)?;
            let lmu = ctx.lap(&u, m)?;
            let lmv = ctx.lap(&v, m)?;
            plan.vol(Lhs, 1.0, "∫Δ^m u Δ^m v", lmu * lmv);
            let l2u = ctx.lap(&u, 2 * m)?;
            plan.vol(Rhs, 1.0, "∫Δ^{2m}u·v", l2u * &v);
            parts_sums(&mut plan, &mut ctx, (&u, "u"), (&v, "v"), m, 1.0, "")?;
        }
        IntegralId::BiharmonicN38 => {
            let v = case.second()?.clone();
            biharmonic(&mut plan, &mut ctx, case.coefficients, &u, &v)?;
        }
        IntegralId::BiharmonicSingleN39 => {
            biharmonic_single(&mut plan, &mut ctx, case.coefficients, &u)?;
        }
        IntegralId::NavierW7 => {
            let v = case.second()?.clone();
            let g = case.g.as_ref().ok_or(IdentityError::Missing { id, input: "G" })?;
            navier(&mut plan, &mut ctx, g, case.a, &u, &v)?;
        }
    }
    if case.coefficients == Coefficients::Literal
        && matches!(case.id, IntegralId::BiharmonicN38 | IntegralId::BiharmonicSingleN39)
    {
        plan.notes.push("μ-gradient terms use coefficient 1 instead of (2−n)/2".into());
    }
    Ok(plan)
}

fn mu_coefficient(n: usize, coefficients: Coefficients) -> (f64, &'static str) {
    match coefficients {
        Coefficients::Derived => ((2.0 - n as f64) / 2.0, "(2−n)/2 "),
        Coefficients::Literal => (1.0, ""),
    }
}

fn biharmonic(plan: &mut Plan, ctx: &mut Ctx, co: Coefficients, u: &Expr, v: &Expr) -> Result<(), IdentityError> {
    use Side::{Lhs, Rhs};
    let n = ctx.n;
    let nf = n as f64;
    let (c, c_s) = mu_coefficient(n, co);
    let eta = ctx.h_dot(v);
    let phi = ctx.h_dot(u);
    let lu = ctx.lap(u, 1)?;
    let lv = ctx.lap(v, 1)?;
    let l2u = ctx.lap(u, 2)?;
    let l2v = ctx.lap(v, 2)?;
    plan.vol(Lhs, 1.0, "∫Δ²u (h,∇v)", l2u * &eta);
    plan.vol(Lhs, 1.0, "∫Δ²v (h,∇u)", l2v * &phi);
    let mu = ctx.mu();
    let t = plan.vol(Rhs, (4.0 - nf) / 2.0, "(4−n)/2 ∫μ Δu Δv", &mu * &lu * &lv);
    plan.mu_term(t);
    let mixed = u * &lv + v * &lu;
    let source = ctx.curvature_source();
    let t = plan.vol(Rhs, c / (nf - 1.0), format!("{c_s}1/(n−1) ∫(L_hR + μR)(uΔv + vΔu)"), source * &mixed);
    plan.mu_term(t);
    let gu = ctx.grad_inner(&mu, &lv);
    let gv = ctx.grad_inner(&mu, &lu);
    let t = plan.vol(Rhs, -c, format!("−{c_s}∫(u(∇μ,∇Δv) + v(∇μ,∇Δu))"), u * gu + v * gv);
    plan.mu_term(t);
    plan.bdy(Rhs, 1.0, "∫∂Δu Δv (h,ν)", &lu * &lv * ctx.h_nu());
    let mu_flux = ctx.flux(&mu);
    let t = plan.bdy(Rhs, c, format!("{c_s}∫∂(uΔv + vΔu)(∇μ,ν)"), mixed * mu_flux);
    plan.mu_term(t);
    for (a, b, a_s, b_s, eta_b) in [(u, v, "u", "v", &eta), (v, u, "v", "u", &phi)] {
        let la = ctx.lap(a, 1)?;
        let flux_la = ctx.flux(&la);
        plan.bdy(Rhs, 1.0, format!("∫∂(h,∇{b_s})(∇Δ{a_s},ν)"), eta_b * flux_la);
        let gh = ctx.grad_h_term(b);
        let hh = ctx.h_hess_term(b);
        plan.bdy(
            Rhs,
            -1.0,
            format!("−∫∂Δ{a_s}(∇^ih^k {b_s}_k ν_i + h^k∇^i∇_k{b_s} ν_i)"),
            la * (gh + hh),
        );
    }
    Ok(())
}

fn biharmonic_single(plan: &mut Plan, ctx: &mut Ctx, co: Coefficients, u: &Expr) -> Result<(), IdentityError> {
    use Side::{Lhs, Rhs};
    let n = ctx.n;
    let nf = n as f64;
    let (c, c_s) = mu_coefficient(n, co);
    let phi = ctx.h_dot(u);
    let lu = ctx.lap(u, 1)?;
    let l2u = ctx.lap(u, 2)?;
    plan.vol(Lhs, 1.0, "∫Δ²u (h,∇u)", l2u * &phi);
    let mu = ctx.mu();
    let t = plan.vol(Rhs, (4.0 - nf) / 4.0, "(4−n)/4 ∫μ(Δu)²", &mu * Expr::square(lu.clone()));
    plan.mu_term(t);
    let g = ctx.grad_inner(&mu, &lu);
    let t = plan.vol(Rhs, -c, format!("−{c_s}∫u(∇μ,∇Δu)"), u * g);
    plan.mu_term(t);
    let source = ctx.curvature_source();
    let t = plan.vol(Rhs, c / (nf - 1.0), format!("{c_s}1/(n−1) ∫(L_hR + μR)uΔu"), source * u * &lu);
    plan.mu_term(t);
    plan.bdy(Rhs, 0.5, "½∫∂(Δu)²(h,ν)", Expr::square(lu.clone()) * ctx.h_nu());
    let mu_flux = ctx.flux(&mu);
    let t = plan.bdy(Rhs, c, format!("{c_s}∫∂uΔu(∇μ,ν)"), u * &lu * mu_flux);
    plan.mu_term(t);
    let flux_lu = ctx.flux(&lu);
    plan.bdy(Rhs, 1.0, "∫∂(h,∇u)(∇Δu,ν)", &phi * flux_lu);
    let gh = ctx.grad_h_term(u);
    let hh = ctx.h_hess_term(u);
    plan.bdy(Rhs, -1.0, "−∫∂Δu(∇^ih^k u_k ν_i + h^k∇^i∇_ku ν_i)", lu * (gh + hh));
    Ok(())
}

/// Substitute `s → u`, `t → v` into `G`.
fn at_solution(g: &Expr, u: &Expr, v: &Expr) -> Expr {
    g.substitute(&[Some(u.clone()), Some(v.clone())])
}

fn navier(plan: &mut Plan, ctx: &mut Ctx, g: &Expr, a: f64, u: &Expr, v: &Expr) -> Result<(), IdentityError> {
    use Side::{Auxiliary as Aux, Lhs, Rhs};
    let nf = ctx.n as f64;
    let gs = at_solution(&ctx.c.partial(g, 0), u, v);
    let gt = at_solution(&ctx.c.partial(g, 1), u, v);
    let guv = at_solution(g, u, v);
    plan.vol(Lhs, nf, "n∫G(u,v)", guv);
    let weighted = a * (u * &gs) + (1.0 - a) * (v * &gt);
    let main_weighted = plan.vol(Rhs, nf - 4.0, "(n−4)∫(a u G_u + (1−a) v G_v)", weighted);
    let phi = ctx.h_dot(u);
    let eta = ctx.h_dot(v);
    let lu = ctx.lap(u, 1)?;
    let lv = ctx.lap(v, 1)?;
    let flux_lu = ctx.flux(&lu);
    let flux_lv = ctx.flux(&lv);
    let a_main =
        plan.bdy(Rhs, -1.0, "−∫∂(h^k u_k ∂_ν(Δv) + h^k v_k ∂_ν(Δu))", &phi * &flux_lv + &eta * &flux_lu);

    let l2u = ctx.lap(u, 2)?;
    let l2v = ctx.lap(v, 2)?;
    let rellich = plan.vol(Aux, 1.0, "∫(Δ²u (h,∇v) + Δ²v (h,∇u))", &l2u * &eta + &l2v * &phi);
    let bilinear = plan.vol(Aux, 1.0, "∫Δ²u·v", &l2u * v);
    let energy = plan.vol(Aux, 1.0, "∫Δu Δv", &lu * &lv);
    let tangential = ctx.grad_inner(u, &lv) + ctx.grad_inner(v, &lu);
    let a_tangential = plan.bdy(Aux, 1.0, "∫∂((∇u,∇Δv) + (∇v,∇Δu))(h,ν)", tangential * ctx.h_nu());
    plan.checks.push(CheckDef {
        label: "biharmonic Rellich identity under Navier data".into(),
        lhs: vec![(rellich, 1.0)],
        rhs: vec![(bilinear, 4.0 - nf), (a_main, 1.0)],
    });
    plan.checks.push(CheckDef {
        label: "∫Δ²u·v = ∫Δu Δv".into(),
        lhs: vec![(bilinear, 1.0)],
        rhs: vec![(energy, 1.0)],
    });
    plan.checks.push(CheckDef {
        label: "∫Δu Δv = ∫(a u G_u + (1−a) v G_v)".into(),
        lhs: vec![(energy, 1.0)],
        rhs: vec![(main_weighted, 1.0)],
    });
    plan.checks.push(CheckDef {
        label: "boundary term from tangential gradients".into(),
        lhs: vec![(a_main, 1.0)],
        rhs: vec![(a_tangential, 1.0)],
    });
    Ok(())
}

/// Navier data, the biharmonic system and `G(0,0) = 0`.
fn navier_preconditions(case: &IntegralCase, samples: &[Vec<f64>]) -> Result<(), IdentityError> {
    let id = case.id();
    let v = case.second()?;
    let g = case.g.as_ref().ok_or(IdentityError::Missing { id, input: "G" })?;
    let g0 = g.eval(&[0.0, 0.0])?;
    if g0.abs() > PRECONDITION_TOLERANCE {
        return Err(IdentityError::NonlinearityAtOrigin { id, value: g0 });
    }
    let mut ctx = Ctx::new(case.metric.clone(), None);
    let u = &case.u;
    let lu = ctx.lap(u, 1)?;
    let lv = ctx.lap(v, 1)?;
    let tape = Tape::compile(&[u.clone(), v.clone(), lu, lv]);
    let nodes = boundary_nodes(&case.domain, &case.metric, &QuadratureSpec::uniform(6)?)?;
    let mut max = [0.0f64; 4];
    let mut out = [0.0; 4];
    let mut scratch = Vec::new();
    for (node, _) in &nodes {
        tape.eval_into(&node.x, &mut scratch, &mut out)?;
        for (m, o) in max.iter_mut().zip(&out) {
            *m = m.max(o.abs());
        }
    }
    for (q, m) in ["u", "v", "Δu", "Δv"].into_iter().zip(max) {
        if !(m <= PRECONDITION_TOLERANCE) {
            return Err(IdentityError::BoundaryData { id, quantity: q, max: m, tolerance: PRECONDITION_TOLERANCE });
        }
    }
    let gs = at_solution(&ctx.c.partial(g, 0), u, v);
    let gt = at_solution(&ctx.c.partial(g, 1), u, v);
    let l2u = ctx.lap(u, 2)?;
    let l2v = ctx.lap(v, 2)?;
    let tape = Tape::compile(&[l2u, gt, l2v, gs]);
    let mut out = [0.0; 4];
    let mut worst = [0.0f64; 2];
    for x in samples {
        tape.eval_into(x, &mut scratch, &mut out)?;
        for e in 0..2 {
            let r = (out[2 * e] - out[2 * e + 1]).abs() / out[2 * e].abs().max(1.0);
            worst[e] = worst[e].max(r);
        }
    }
    for (equation, w) in ["Δ²u = G_v(u,v)", "Δ²v = G_u(u,v)"].into_iter().zip(worst) {
        if !(w <= PRECONDITION_TOLERANCE) {
            return Err(IdentityError::SystemEquation { id, equation, max: w, tolerance: PRECONDITION_TOLERANCE });
        }
    }
    Ok(())
}

fn integrate_region(
    plan: &Plan,
    region: Region,
    case: &IntegralCase,
    out: &mut [f64],
) -> Result<(), IdentityError> {
    let (idx, exprs): (Vec<usize>, Vec<Expr>) = plan
        .terms
        .iter()
        .enumerate()
        .filter(|(_, t)| t.region == region)
        .map(|(i, t)| (i, t.integrand.clone()))
        .unzip();
    if idx.is_empty() {
        return Ok(());
    }
    let tape = Tape::compile(&exprs);
    let values = match region {
        Region::Volume => integrate_volume(&tape, &case.domain, &case.metric, &case.quadrature)?,
        Region::Boundary => integrate_boundary(&tape, &case.domain, &case.metric, &case.quadrature)?,
    };
    for (i, v) in idx.into_iter().zip(values) {
        out[i] = v;
    }
    Ok(())
}

/// Evaluate both sides of an integral identity with a full term breakdown.
pub fn evaluate_integral(case: &IntegralCase) -> Result<IdentityReport, IdentityError> {
    let start = Instant::now();
    let id = case.id();
    let requirement = case.id.requirement();
    let needs_samples = requirement != Requirement::None || case.id == IntegralId::NavierW7;
    let samples = if needs_samples {
        sample_interior(&case.domain, GATE_SAMPLES, case.seed).ok_or(IdentityError::Parameter {
            id,
            reason: "could not sample interior points of the domain".into(),
        })?
    } else {
        Vec::new()
    };
    let gate = check_gate(id, requirement, case.h.as_ref(), &samples, case.killing_tolerance)?;
    if case.id == IntegralId::NavierW7 {
        navier_preconditions(case, &samples)?;
    }
    let plan = build_plan(case)?;
    let mut integrals = vec![0.0; plan.terms.len()];
    integrate_region(&plan, Region::Volume, case, &mut integrals)?;
    integrate_region(&plan, Region::Boundary, case, &mut integrals)?;

    let terms: Vec<TermValue> = plan
        .terms
        .iter()
        .zip(&integrals)
        .map(|(t, &integral)| TermValue {
            label: t.label.clone(),
            side: t.side,
            region: t.region,
            coefficient: t.coeff,
            integral,
            value: t.coeff * integral,
            involves_mu: t.involves_mu,
        })
        .collect();
    let side_sum = |side: Side| {
        let values: Vec<f64> = terms.iter().filter(|t| t.side == side).map(|t| t.value).collect();
        pairwise_sum(&values)
    };
    let lhs = side_sum(Side::Lhs);
    let rhs = side_sum(Side::Rhs);
    let main = terms.iter().filter(|t| t.side != Side::Auxiliary).map(|t| t.value);
    let rel_residual = relative_residual(lhs, rhs, main);
    let sub_checks = plan
        .checks
        .iter()
        .map(|c| {
            let side = |parts: &[(usize, f64)]| -> (f64, Vec<f64>) {
                let values: Vec<f64> = parts.iter().map(|&(i, k)| k * integrals[i]).collect();
                (pairwise_sum(&values), values)
            };
            let (l, lv) = side(&c.lhs);
            let (r, rv) = side(&c.rhs);
            SubCheck {
                label: c.label.clone(),
                lhs: l,
                rhs: r,
                abs_residual: (l - r).abs(),
                rel_residual: relative_residual(l, r, lv.into_iter().chain(rv)),
            }
        })
        .collect();
    Ok(IdentityReport {
        id,
        lhs,
        rhs,
        terms,
        abs_residual: (lhs - rhs).abs(),
        rel_residual,
        quadrature: Some(case.quadrature),
        wall_time: start.elapsed(),
        sub_checks,
        notes: plan.notes,
        gate,
    })
}

/// One term of an identity as planned, before integration.
#[derive(Debug, Clone, PartialEq)]
pub struct TermOutline {
    pub label: String,
    pub side: Side,
    pub region: Region,
    pub coefficient: f64,
    pub involves_mu: bool,
}

/// Term structure and sub-check labels of `case` without integrating.
/// Preconditions are not checked.
pub fn outline(case: &IntegralCase) -> Result<(Vec<TermOutline>, Vec<String>), IdentityError> {
    let plan = build_plan(case)?;
    let terms = plan
        .terms
        .into_iter()
        .map(|t| TermOutline { label: t.label, side: t.side, region: t.region, coefficient: t.coeff, involves_mu: t.involves_mu })
        .collect();
    Ok((terms, plan.checks.into_iter().map(|c| c.label).collect()))
}

/// The N28, N29 and N30 reports of one scenario and how well the chain
/// closes.
#[derive(Debug, Clone)]
pub struct CrossCheck {
    pub compact: IdentityReport,
    pub parts: IdentityReport,
    pub expanded: IdentityReport,
    /// `|RHS(N30) − RHS(N28)| / max(1, max |term|)`.
    pub agreement: f64,
}

impl CrossCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.agreement <= tolerance
            && [&self.compact, &self.parts, &self.expanded].iter().all(|r| r.passes(tolerance))
    }
}

/// Evaluate N28, N29 and N30 on the scenario of a polyharmonic case and
/// compare the two right-hand sides of `R_{2m}`.
pub fn cross_check_formulations(case: &IntegralCase) -> Result<CrossCheck, IdentityError> {
    if !matches!(case.id, IntegralId::PolyN30 | IntegralId::PolyCompactN28 | IntegralId::PartsN29) {
        return Err(IdentityError::Parameter {
            id: case.id(),
            reason: "cross-check needs a polyharmonic pair scenario".into(),
        });
    }
    let compact = evaluate_integral(&case.clone().with_id(IntegralId::PolyCompactN28))?;
    let parts = evaluate_integral(&case.clone().with_id(IntegralId::PartsN29))?;
    let expanded = evaluate_integral(&case.clone().with_id(IntegralId::PolyN30))?;
    let scale = compact.terms.iter().chain(&expanded.terms).map(|t| t.value);
    let agreement = relative_residual(expanded.rhs, compact.rhs, scale);
    Ok(CrossCheck { compact, parts, expanded, agreement })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub order: usize,
    pub abs_residual: f64,
    pub rel_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Some refinement step failed to reduce the relative residual.
    pub stalled: bool,
}

impl ConvergenceStudy {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].rel_residual < w[0].rel_residual)
    }

    pub fn last(&self) -> Option<&ConvergenceRow> {
        self.rows.last()
    }
}

/// Residual of the case at each uniform quadrature order.
pub fn convergence_study(case: &IntegralCase, orders: &[usize]) -> Result<ConvergenceStudy, IdentityError> {
    if orders.len() < 2 {
        return Err(IdentityError::Parameter { id: case.id(), reason: "at least two orders are needed".into() });
    }
    let mut rows = Vec::with_capacity(orders.len());
    for &q in orders {
        let r = evaluate_integral(&case.clone().with_quadrature(QuadratureSpec::uniform(q)?))?;
        rows.push(ConvergenceRow { order: q, abs_residual: r.abs_residual, rel_residual: r.rel_residual });
    }
    let stalled = rows.windows(2).any(|w| w[1].rel_residual >= w[0].rel_residual);
    Ok(ConvergenceStudy { rows, stalled })
}
