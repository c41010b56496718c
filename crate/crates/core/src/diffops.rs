//! Covariant calculus on scalar, vector and small tensor fields.
//!
//! Everything here produces expressions; [`Calculus`] owns the derivative
//! memo for one metric so repeated requests (all second partials of a field,
//! the iterates of a Laplacian) share work. The point-wise wrappers on
//! [`ScalarField`] and [`VectorField`] compile and evaluate those
//! expressions at a single chart point.

use std::collections::HashMap;
use std::sync::Arc;

use crate::expr::{DiffCache, EvalError, Expr, Tape};
use crate::geometry::{ChartMetric, GeometryError};

/// Expression node budget for iterated Laplacians.
pub const DEFAULT_NODE_CAP: usize = 2_000_000;

/// Absolute tolerance of the conformal Killing test.
pub const DEFAULT_KILLING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffopsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("expression for {what} has {nodes} nodes, above the cap of {cap}")]
    ExpressionTooLarge { what: String, nodes: usize, cap: usize },
    #[error("field has {got} components but the metric has dimension {n}")]
    Dimension { n: usize, got: usize },
    #[error("at least one sample point is required")]
    NoSamples,
    #[error("not a conformal Killing field: deviation {deviation:e} exceeds {tolerance:e}")]
    NotConformalKilling { deviation: f64, tolerance: f64 },
    #[error("not a homothety: conformal factor varies by {spread:e} across samples")]
    NotHomothety { spread: f64 },
    #[error("isometric Killing field: conformal factor is zero")]
    IsometricKilling,
}

/// Index position of a tensor slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Up,
    Down,
}

/// Components of a tensor field, row-major over its slots.
#[derive(Debug, Clone)]
pub struct Tensor {
    n: usize,
    slots: Vec<Slot>,
    data: Vec<Expr>,
}

impl Tensor {
    pub fn new(n: usize, slots: Vec<Slot>, data: Vec<Expr>) -> Tensor {
        assert_eq!(data.len(), n.pow(slots.len() as u32), "component count does not match slots");
        Tensor { n, slots, data }
    }

    pub fn scalar(n: usize, e: Expr) -> Tensor {
        Tensor::new(n, Vec::new(), vec![e])
    }

    pub fn vector(components: Vec<Expr>) -> Tensor {
        Tensor::new(components.len(), vec![Slot::Up], components)
    }

    pub fn covector(components: Vec<Expr>) -> Tensor {
        Tensor::new(components.len(), vec![Slot::Down], components)
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn data(&self) -> &[Expr] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Expr> {
        self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    fn index_of(&self, mut offset: usize) -> Vec<usize> {
        let mut idx = vec![0; self.rank()];
        for slot in idx.iter_mut().rev() {
            *slot = offset % self.n;
            offset /= self.n;
        }
        idx
    }

    pub fn get(&self, idx: &[usize]) -> &Expr {
        &self.data[self.offset(idx)]
    }
}

/// Symbolic covariant calculus for one metric.
pub struct Calculus {
    metric: Arc<ChartMetric>,
    cache: DiffCache,
    laplacians: HashMap<Expr, Vec<Expr>>,
    node_cap: usize,
}

impl Calculus {
    pub fn new(metric: Arc<ChartMetric>) -> Self {
        Calculus { metric, cache: DiffCache::new(), laplacians: HashMap::new(), node_cap: DEFAULT_NODE_CAP }
    }

    pub fn with_node_cap(mut self, cap: usize) -> Self {
        self.node_cap = cap;
        self
    }

    pub fn metric(&self) -> &Arc<ChartMetric> {
        &self.metric
    }

    pub fn n(&self) -> usize {
        self.metric.n()
    }

    pub fn partial(&mut self, e: &Expr, i: usize) -> Expr {
        self.cache.diff(e, i)
    }

    /// `u_i = ∂_i u`.
    pub fn gradient(&mut self, u: &Expr) -> Vec<Expr> {
        (0..self.n()).map(|i| self.cache.diff(u, i)).collect()
    }

    /// `w^i = g^{ij} w_j`.
    pub fn raise(&self, w: &[Expr]) -> Vec<Expr> {
        let n = self.n();
        (0..n).map(|i| Expr::sum((0..n).map(|j| self.metric.g_inv(i, j) * &w[j]))).collect()
    }

    /// `v_i = g_{ij} v^j`.
    pub fn lower(&self, v: &[Expr]) -> Vec<Expr> {
        let n = self.n();
        (0..n).map(|i| Expr::sum((0..n).map(|j| self.metric.g(i, j) * &v[j]))).collect()
    }

    /// `u^i`, the metric gradient.
    pub fn gradient_vector(&mut self, u: &Expr) -> Vec<Expr> {
        let w = self.gradient(u);
        self.raise(&w)
    }

    /// `g_{ij} a^i b^j`.
    pub fn inner(&self, a: &[Expr], b: &[Expr]) -> Expr {
        let n = self.n();
        Expr::sum((0..n * n).map(|ij| self.metric.g(ij / n, ij % n) * &a[ij / n] * &b[ij % n]))
    }

    /// `g^{ij} a_i b_j`.
    pub fn inner_dual(&self, a: &[Expr], b: &[Expr]) -> Expr {
        let n = self.n();
        Expr::sum((0..n * n).map(|ij| self.metric.g_inv(ij / n, ij % n) * &a[ij / n] * &b[ij % n]))
    }

    /// Covariant derivative, appending a lower slot: `(∇T)_{…;j}`.
    pub fn covariant(&mut self, t: &Tensor) -> Tensor {
        let n = self.n();
        let metric = self.metric.clone();
        let mut slots = t.slots.clone();
        slots.push(Slot::Down);
        let mut data = Vec::with_capacity(t.data.len() * n);
        for (off, comp) in t.data.iter().enumerate() {
            let idx = t.index_of(off);
            for j in 0..n {
                let mut terms = vec![self.cache.diff(comp, j)];
                for (p, slot) in t.slots.iter().enumerate() {
                    let mut other = idx.clone();
                    for s in 0..n {
                        other[p] = s;
                        let value = t.get(&other);
                        match slot {
                            Slot::Up => terms.push(metric.gamma(idx[p], j, s) * value),
                            Slot::Down => terms.push(-(metric.gamma(s, j, idx[p]) * value)),
                        }
                    }
                }
                data.push(Expr::sum(terms));
            }
        }
        Tensor { n, slots, data }
    }

    /// Contract slots `a` and `b`, inserting the metric when both have the
    /// same position.
    pub fn trace(&self, t: &Tensor, a: usize, b: usize) -> Tensor {
        assert!(a != b && a < t.rank() && b < t.rank());
        let n = self.n();
        let keep: Vec<usize> = (0..t.rank()).filter(|&p| p != a && p != b).collect();
        let slots: Vec<Slot> = keep.iter().map(|&p| t.slots[p]).collect();
        let count = n.pow(keep.len() as u32);
        let mut data = Vec::with_capacity(count);
        for off in 0..count {
            let mut rest = vec![0; keep.len()];
            let mut o = off;
            for r in rest.iter_mut().rev() {
                *r = o % n;
                o /= n;
            }
            let mut terms = Vec::new();
            let mut idx = vec![0; t.rank()];
            for (k, &p) in keep.iter().enumerate() {
                idx[p] = rest[k];
            }
            for i in 0..n {
                for j in 0..n {
                    let weight = match (t.slots[a], t.slots[b]) {
                        (Slot::Up, Slot::Down) | (Slot::Down, Slot::Up) => {
                            if i != j {
                                continue;
                            }
                            Expr::one()
                        }
                        (Slot::Down, Slot::Down) => self.metric.g_inv(i, j).clone(),
                        (Slot::Up, Slot::Up) => self.metric.g(i, j).clone(),
                    };
                    if weight.is_zero() {
                        continue;
                    }
                    idx[a] = i;
                    idx[b] = j;
                    terms.push(weight * t.get(&idx));
                }
            }
            data.push(Expr::sum(terms));
        }
        Tensor { n, slots, data }
    }

    /// Move slot `p` up with `g^{ij}`.
    pub fn raise_slot(&self, t: &Tensor, p: usize) -> Tensor {
        self.move_slot(t, p, Slot::Up)
    }

    /// Move slot `p` down with `g_{ij}`.
    pub fn lower_slot(&self, t: &Tensor, p: usize) -> Tensor {
        self.move_slot(t, p, Slot::Down)
    }

    fn move_slot(&self, t: &Tensor, p: usize, to: Slot) -> Tensor {
        if t.slots[p] == to {
            return t.clone();
        }
        let n = self.n();
        let mut slots = t.slots.clone();
        slots[p] = to;
        let data = (0..t.data.len())
            .map(|off| {
                let idx = t.index_of(off);
                let mut other = idx.clone();
                Expr::sum((0..n).map(|s| {
                    other[p] = s;
                    let m = match to {
                        Slot::Up => self.metric.g_inv(idx[p], s),
                        Slot::Down => self.metric.g(idx[p], s),
                    };
                    m * t.get(&other)
                }))
            })
            .collect();
        Tensor { n, slots, data }
    }

    /// `∇_i ∇_j u = ∂_i ∂_j u − Γ^k_{ij} ∂_k u`, row-major.
    pub fn hessian(&mut self, u: &Expr) -> Vec<Expr> {
        let n = self.n();
        let du = self.gradient(u);
        let metric = self.metric.clone();
        let mut out = vec![Expr::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let mut terms = vec![self.cache.diff(&du[j], i)];
                for k in 0..n {
                    terms.push(-(metric.gamma(k, i, j) * &du[k]));
                }
                let value = Expr::sum(terms);
                out[j * n + i] = value.clone();
                out[i * n + j] = value;
            }
        }
        out
    }

    /// Laplace–Beltrami operator in density form,
    /// `(1/√g) ∂_i (√g g^{ij} ∂_j u)`.
    pub fn laplacian(&mut self, u: &Expr) -> Expr {
        let n = self.n();
        let metric = self.metric.clone();
        let du = self.gradient(u);
        let sqrt_det = metric.sqrt_det().clone();
        let terms: Vec<Expr> = (0..n)
            .map(|i| {
                let flux = &sqrt_det * Expr::sum((0..n).map(|j| metric.g_inv(i, j) * &du[j]));
                self.cache.diff(&flux, i)
            })
            .collect();
        Expr::sum(terms) / sqrt_det
    }

    /// Laplace–Beltrami operator as the trace of the covariant Hessian.
    pub fn laplacian_trace(&mut self, u: &Expr) -> Expr {
        let n = self.n();
        let hess = self.hessian(u);
        Expr::sum((0..n * n).map(|ij| self.metric.g_inv(ij / n, ij % n) * &hess[ij]))
    }

    /// `Δ^k u`, built by composing Laplacians; iterates are memoized.
    pub fn polyharmonic(&mut self, u: &Expr, k: usize) -> Result<Expr, DiffopsError> {
        let mut chain = self.laplacians.remove(u).unwrap_or_else(|| vec![u.clone()]);
        while chain.len() <= k {
            let next = self.laplacian(chain.last().unwrap());
            let nodes = next.node_count();
            if nodes > self.node_cap {
                let what = format!("Δ^{} of a field", chain.len());
                self.laplacians.insert(u.clone(), chain);
                return Err(DiffopsError::ExpressionTooLarge { what, nodes, cap: self.node_cap });
            }
            chain.push(next);
        }
        let out = chain[k].clone();
        self.laplacians.insert(u.clone(), chain);
        Ok(out)
    }

    /// `∇_i h^i = ∂_i h^i + Γ^i_{is} h^s`.
    pub fn divergence(&mut self, h: &[Expr]) -> Expr {
        let n = self.n();
        let metric = self.metric.clone();
        let mut terms = Vec::new();
        for i in 0..n {
            terms.push(self.cache.diff(&h[i], i));
            for s in 0..n {
                terms.push(metric.gamma(i, i, s) * &h[s]);
            }
        }
        Expr::sum(terms)
    }

    /// `(1/√g) ∂_i (√g h^i)`.
    pub fn divergence_density(&mut self, h: &[Expr]) -> Expr {
        let sqrt_det = self.metric.sqrt_det().clone();
        let terms: Vec<Expr> = (0..self.n()).map(|i| self.cache.diff(&(&sqrt_det * &h[i]), i)).collect();
        Expr::sum(terms) / sqrt_det
    }

    /// `μ = (2/n) div h`.
    pub fn conformal_factor(&mut self, h: &[Expr]) -> Expr {
        let n = self.n() as f64;
        (2.0 / n) * self.divergence(h)
    }

    /// `(L_h g)_{ij} = ∇_i h_j + ∇_j h_i`, row-major.
    pub fn lie_derivative_metric(&mut self, h: &[Expr]) -> Vec<Expr> {
        let n = self.n();
        let lowered = self.lower(h);
        let nabla = self.covariant(&Tensor::covector(lowered));
        // nabla[(j, i)] = ∇_i h_j
        (0..n * n)
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                nabla.get(&[j, i]) + nabla.get(&[i, j])
            })
            .collect()
    }

    /// Coordinate formula `h^k ∂_k g_ij + g_kj ∂_i h^k + g_ik ∂_j h^k`.
    pub fn lie_derivative_metric_coordinate(&mut self, h: &[Expr]) -> Vec<Expr> {
        let n = self.n();
        let metric = self.metric.clone();
        (0..n * n)
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                let mut terms = Vec::new();
                for k in 0..n {
                    terms.push(&h[k] * self.cache.diff(metric.g(i, j), k));
                    terms.push(metric.g(k, j) * self.cache.diff(&h[k], i));
                    terms.push(metric.g(i, k) * self.cache.diff(&h[k], j));
                }
                Expr::sum(terms)
            })
            .collect()
    }

    /// `L_h f = h^k ∂_k f`.
    pub fn lie_derivative_scalar(&mut self, h: &[Expr], f: &Expr) -> Expr {
        let df = self.gradient(f);
        Expr::dot(h, &df)
    }

    /// `∇h` as the mixed tensor `T^k_i = ∇_i h^k`, row-major in `(k, i)`.
    pub fn vector_gradient(&mut self, h: &[Expr]) -> Tensor {
        self.covariant(&Tensor::vector(h.to_vec()))
    }

    /// `∇^i h^k`, row-major in `(i, k)`.
    pub fn vector_gradient_raised(&mut self, h: &[Expr]) -> Vec<Expr> {
        let n = self.n();
        let t = self.vector_gradient(h);
        let raised = self.raise_slot(&t, 1);
        // raised[(k, i)] = ∇^i h^k
        (0..n * n).map(|ik| raised.get(&[ik % n, ik / n]).clone()).collect()
    }

    /// Rough Laplacian of a vector field, `Δh^k = g^{ij} ∇_j ∇_i h^k`.
    pub fn vector_laplacian(&mut self, h: &[Expr]) -> Vec<Expr> {
        let first = self.vector_gradient(h);
        let second = self.covariant(&first);
        self.trace(&second, 1, 2).into_data()
    }

    /// Rough Laplacian of a covector field, `g^{ij} ∇_j ∇_i w_k`.
    pub fn covector_laplacian(&mut self, w: &[Expr]) -> Vec<Expr> {
        let first = self.covariant(&Tensor::covector(w.to_vec()));
        let second = self.covariant(&first);
        self.trace(&second, 1, 2).into_data()
    }

    /// `∇_i ∇_k V^i` for a vector field `V`: the divergence of `∇V` on its
    /// upper slot, one component per `k`.
    pub fn divergence_of_gradient(&mut self, v: &[Expr]) -> Vec<Expr> {
        let first = self.vector_gradient(v);
        let second = self.covariant(&first);
        // second[(i, k, j)] = ∇_j ∇_k V^i; contract i with j.
        self.trace(&second, 0, 2).into_data()
    }

    /// `∇^i h^j + ∇^j h^i − μ g^{ij}` with `μ = (2/n) div h`, and `μ`.
    pub fn killing_defect(&mut self, h: &[Expr]) -> (Vec<Expr>, Expr) {
        let n = self.n();
        let mu = self.conformal_factor(h);
        let raised = self.vector_gradient_raised(h);
        let defect = (0..n * n)
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                &raised[i * n + j] + &raised[j * n + i] - &mu * self.metric.g_inv(i, j)
            })
            .collect();
        (defect, mu)
    }
}

fn evaluate(metric: &ChartMetric, exprs: &[Expr], x: &[f64]) -> Result<Vec<f64>, DiffopsError> {
    metric.matrix_at(x)?;
    Ok(Tape::compile(exprs).eval(x)?)
}

/// A scalar function on a chart.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub expr: Expr,
    pub label: String,
    metric: Arc<ChartMetric>,
}

impl ScalarField {
    pub fn new(metric: Arc<ChartMetric>, expr: Expr, label: impl Into<String>) -> Self {
        ScalarField { expr, label: label.into(), metric }
    }

    pub fn metric(&self) -> &Arc<ChartMetric> {
        &self.metric
    }

    fn calculus(&self) -> Calculus {
        Calculus::new(self.metric.clone())
    }

    pub fn value_at(&self, x: &[f64]) -> Result<f64, DiffopsError> {
        Ok(evaluate(&self.metric, std::slice::from_ref(&self.expr), x)?[0])
    }

    /// `(u_i, u^i)` at `x`.
    pub fn gradient_at(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DiffopsError> {
        let mut c = self.calculus();
        let mut exprs = c.gradient(&self.expr);
        exprs.extend(c.raise(&exprs.clone()));
        let mut values = evaluate(&self.metric, &exprs, x)?;
        let up = values.split_off(self.metric.n());
        Ok((values, up))
    }

    /// Covariant Hessian at `x`, row-major.
    pub fn hessian_at(&self, x: &[f64]) -> Result<Vec<f64>, DiffopsError> {
        let exprs = self.calculus().hessian(&self.expr);
        evaluate(&self.metric, &exprs, x)
    }

    pub fn laplacian_at(&self, x: &[f64]) -> Result<f64, DiffopsError> {
        let e = self.calculus().laplacian(&self.expr);
        Ok(evaluate(&self.metric, &[e], x)?[0])
    }

    /// Density-form and Hessian-trace Laplacians at `x`.
    pub fn laplacian_forms_at(&self, x: &[f64]) -> Result<(f64, f64), DiffopsError> {
        let mut c = self.calculus();
        let a = c.laplacian(&self.expr);
        let b = c.laplacian_trace(&self.expr);
        let v = evaluate(&self.metric, &[a, b], x)?;
        Ok((v[0], v[1]))
    }

    pub fn polyharmonic_at(&self, x: &[f64], k: usize) -> Result<f64, DiffopsError> {
        let e = self.calculus().polyharmonic(&self.expr, k)?;
        Ok(evaluate(&self.metric, &[e], x)?[0])
    }
}

/// A contravariant vector field `h = h^i ∂_i`.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub components: Vec<Expr>,
    pub label: String,
    metric: Arc<ChartMetric>,
}

impl VectorField {
    pub fn new(metric: Arc<ChartMetric>, components: Vec<Expr>, label: impl Into<String>) -> Result<Self, DiffopsError> {
        if components.len() != metric.n() {
            return Err(DiffopsError::Dimension { n: metric.n(), got: components.len() });
        }
        Ok(VectorField { components, label: label.into(), metric })
    }

    pub fn metric(&self) -> &Arc<ChartMetric> {
        &self.metric
    }

    /// The field multiplied by a constant.
    pub fn scaled(&self, c: f64) -> VectorField {
        VectorField {
            components: self.components.iter().map(|h| c * h).collect(),
            label: format!("{c}·{}", self.label),
            metric: self.metric.clone(),
        }
    }

    fn calculus(&self) -> Calculus {
        Calculus::new(self.metric.clone())
    }

    pub fn divergence_at(&self, x: &[f64]) -> Result<f64, DiffopsError> {
        let e = self.calculus().divergence(&self.components);
        Ok(evaluate(&self.metric, &[e], x)?[0])
    }

    pub fn divergence_density_at(&self, x: &[f64]) -> Result<f64, DiffopsError> {
        let e = self.calculus().divergence_density(&self.components);
        Ok(evaluate(&self.metric, &[e], x)?[0])
    }

    /// `L_h g_ij` at `x`, row-major.
    pub fn lie_derivative_metric_at(&self, x: &[f64]) -> Result<Vec<f64>, DiffopsError> {
        let exprs = self.calculus().lie_derivative_metric(&self.components);
        evaluate(&self.metric, &exprs, x)
    }

    pub fn lie_derivative_scalar_at(&self, f: &Expr, x: &[f64]) -> Result<f64, DiffopsError> {
        let e = self.calculus().lie_derivative_scalar(&self.components, f);
        Ok(evaluate(&self.metric, &[e], x)?[0])
    }
}

/// Conformal Killing test of a vector field over sample points.
#[derive(Debug, Clone, PartialEq)]
pub struct KillingDiagnostics {
    /// `μ = (2/n) div h` at each sample.
    pub mu: Vec<f64>,
    pub div_h: Vec<f64>,
    /// Max over samples and index pairs of `|∇^i h^j + ∇^j h^i − μ g^{ij}|`.
    pub deviation: f64,
    pub is_homothety_normalized: bool,
}

impl KillingDiagnostics {
    pub fn mu_spread(&self) -> f64 {
        let lo = self.mu.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    pub fn is_conformal(&self, tolerance: f64) -> bool {
        self.deviation <= tolerance
    }
}

pub fn killing_diagnostics(h: &VectorField, points: &[Vec<f64>]) -> Result<KillingDiagnostics, DiffopsError> {
    if points.is_empty() {
        return Err(DiffopsError::NoSamples);
    }
    let n = h.metric.n();
    let mut c = h.calculus();
    let (mut exprs, mu) = c.killing_defect(&h.components);
    exprs.push(mu);
    let tape = Tape::compile(&exprs);
    let mut diag = KillingDiagnostics { mu: Vec::new(), div_h: Vec::new(), deviation: 0.0, is_homothety_normalized: true };
    for x in points {
        h.metric.matrix_at(x)?;
        let v = tape.eval(x)?;
        let mu = v[n * n];
        let div = mu * n as f64 / 2.0;
        diag.deviation = v[..n * n].iter().fold(diag.deviation, |acc, d| acc.max(d.abs()));
        if (div - n as f64).abs() > 1e-9 {
            diag.is_homothety_normalized = false;
        }
        diag.mu.push(mu);
        diag.div_h.push(div);
    }
    Ok(diag)
}

/// Rescale a homothety so that `div h = n`.
pub fn normalize_homothety(h: &VectorField, points: &[Vec<f64>]) -> Result<VectorField, DiffopsError> {
    let diag = killing_diagnostics(h, points)?;
    if !diag.is_conformal(DEFAULT_KILLING_TOLERANCE) {
        return Err(DiffopsError::NotConformalKilling { deviation: diag.deviation, tolerance: DEFAULT_KILLING_TOLERANCE });
    }
    let spread = diag.mu_spread();
    if spread > 1e-9 {
        return Err(DiffopsError::NotHomothety { spread });
    }
    let mu = diag.mu[0];
    if mu.abs() <= 1e-12 {
        return Err(DiffopsError::IsometricKilling);
    }
    if diag.is_homothety_normalized {
        return Ok(h.clone());
    }
    let mut out = h.scaled(2.0 / mu);
    out.label = h.label.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Validity;

    fn conformal(n: usize, factor: Expr) -> Arc<ChartMetric> {
        let g = (0..n)
            .map(|i| (0..n).map(|j| if i == j { factor.clone() } else { Expr::zero() }).collect())
            .collect();
        Arc::new(ChartMetric::new("test", g, Validity::Everywhere).unwrap())
    }

    fn x(i: usize) -> Expr {
        Expr::var(i)
    }

    fn r2(n: usize) -> Expr {
        Expr::sum((0..n).map(|i| Expr::square(x(i))))
    }

    #[test]
    fn gradient_raising() {
        let flat = conformal(3, Expr::one());
        let (low, _) = ScalarField::new(flat, x(0), "x1").gradient_at(&[0.4, 0.1, 0.2]).unwrap();
        assert_eq!(low, vec![1.0, 0.0, 0.0]);
        let m = conformal(2, Expr::exp(2.0 * x(1)));
        let (_, up) = ScalarField::new(m, x(0), "x1").gradient_at(&[0.0, 0.3]).unwrap();
        assert!((up[0] - (-0.6f64).exp()).abs() < 1e-15);
        let sphere = conformal(2, 4.0 / Expr::square(1.0 + r2(2)));
        let (_, up) = ScalarField::new(sphere, x(0), "x1").gradient_at(&[1.0, 0.0]).unwrap();
        assert!((up[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flat_laplacians() {
        let flat = conformal(3, Expr::one());
        let u = ScalarField::new(flat.clone(), r2(3), "r2");
        assert_eq!(u.laplacian_at(&[0.3, 0.2, 0.1]).unwrap(), 6.0);
        let h = ScalarField::new(flat.clone(), Expr::square(x(0)) - Expr::square(x(1)), "harmonic");
        assert_eq!(h.laplacian_at(&[0.3, 0.2, 0.1]).unwrap(), 0.0);
        let quartic = ScalarField::new(flat.clone(), Expr::square(r2(3)), "r4");
        assert!((quartic.polyharmonic_at(&[0.3, -0.2, 0.5], 2).unwrap() - 120.0).abs() < 1e-12);
        let cubic = ScalarField::new(flat, x(0) * x(1) * x(2) + Expr::pow(x(0), 3.0), "cubic");
        assert_eq!(cubic.polyharmonic_at(&[0.3, -0.2, 0.5], 2).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        let sphere = conformal(3, 4.0 / Expr::square(1.0 + r2(3)));
        let c = ScalarField::new(sphere, Expr::constant(2.5), "c");
        assert!(c.hessian_at(&[0.1, 0.2, 0.3]).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(c.polyharmonic_at(&[0.1, 0.2, 0.3], 3).unwrap(), 0.0);
    }

    #[test]
    fn dilation_and_rotation() {
        let flat = conformal(3, Expr::one());
        let h = VectorField::new(flat.clone(), Expr::coordinates(3), "dilation").unwrap();
        assert_eq!(h.divergence_at(&[0.1, 0.2, 0.3]).unwrap(), 3.0);
        let lie = h.lie_derivative_metric_at(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(lie, vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]);
        let rot = VectorField::new(flat.clone(), vec![-x(1), x(0), Expr::zero()], "rotation").unwrap();
        assert!(rot.lie_derivative_metric_at(&[0.1, 0.2, 0.3]).unwrap().iter().all(|&v| v == 0.0));
        let shear = VectorField::new(flat, vec![x(1), Expr::zero(), Expr::zero()], "shear").unwrap();
        let d = killing_diagnostics(&shear, &[vec![0.1, 0.2, 0.3]]).unwrap();
        assert!(d.deviation > 0.5);
    }

    #[test]
    fn special_conformal_field_on_flat_space() {
        let flat = conformal(3, Expr::one());
        // b = e1: h^i = 2 x^i x1 − δ^i_1 |x|²
        let h: Vec<Expr> = (0..3)
            .map(|i| {
                let base = 2.0 * x(i) * x(0);
                if i == 0 {
                    base - r2(3)
                } else {
                    base
                }
            })
            .collect();
        let h = VectorField::new(flat, h, "special").unwrap();
        let pts = vec![vec![0.3, -0.1, 0.7], vec![-0.5, 0.2, 0.1]];
        let d = killing_diagnostics(&h, &pts).unwrap();
        assert!(d.deviation <= 1e-10);
        for (mu, p) in d.mu.iter().zip(&pts) {
            assert!((mu - 4.0 * p[0]).abs() < 1e-12);
        }
        assert!(matches!(normalize_homothety(&h, &pts), Err(DiffopsError::NotHomothety { .. })));
    }

    #[test]
    fn normalization_rescales() {
        let flat = conformal(3, Expr::one());
        let h = VectorField::new(flat.clone(), Expr::coordinates(3).into_iter().map(|c| 3.0 * c).collect(), "3x").unwrap();
        let pts = vec![vec![0.1, 0.2, 0.3], vec![0.5, -0.4, 0.2]];
        let d = killing_diagnostics(&h, &pts).unwrap();
        assert!((d.mu[0] - 6.0).abs() < 1e-14);
        let normalized = normalize_homothety(&h, &pts).unwrap();
        let d = killing_diagnostics(&normalized, &pts).unwrap();
        assert!(d.is_homothety_normalized);
        let rot = VectorField::new(flat, vec![-x(1), x(0), Expr::zero()], "rotation").unwrap();
        assert!(matches!(normalize_homothety(&rot, &pts), Err(DiffopsError::IsometricKilling)));
    }

    #[test]
    fn divergence_forms_agree() {
        let m = conformal(3, Expr::exp(2.0 * (0.3 * x(0) - 0.2 * x(1) * x(2))));
        let h = VectorField::new(m, vec![Expr::sin(x(1)), x(0) * x(2), Expr::cos(x(0) + x(2))], "h").unwrap();
        for p in [[0.1, 0.2, 0.3], [-0.4, 0.6, 0.2]] {
            let a = h.divergence_at(&p).unwrap();
            let b = h.divergence_density_at(&p).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn lie_derivative_forms_agree() {
        let m = conformal(2, 4.0 / Expr::square(1.0 + r2(2)));
        let mut c = Calculus::new(m.clone());
        let h = vec![x(0) * x(1), Expr::sin(x(0))];
        let a = c.lie_derivative_metric(&h);
        let b = c.lie_derivative_metric_coordinate(&h);
        let p = [0.3, -0.7];
        for (ea, eb) in a.iter().zip(&b) {
            assert!((ea.eval(&p).unwrap() - eb.eval(&p).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn node_cap_is_enforced() {
        let sphere = conformal(3, 4.0 / Expr::square(1.0 + r2(3)));
        let mut c = Calculus::new(sphere).with_node_cap(500);
        let err = c.polyharmonic(&(x(0) * x(1)), 3).unwrap_err();
        assert!(matches!(err, DiffopsError::ExpressionTooLarge { .. }));
    }
}
