//! Domains, quadrature, and boundary data.
//!
//! Volume integrals use `dV = √det g dx`. Boxes use tensor Gauss–Legendre
//! nodes directly; star-shaped regions are pulled back along the radial map
//! `x = c + ρ (P(t) − c)`, `ρ ∈ [0, 1]`, where `P` parametrizes the boundary.
//! Boundary integrals use the induced density `√det(Jᵀ G J)` of each patch
//! and the covariant outward unit normal `ν_i`, normalized so that
//! `g^{ij} ν_i ν_j = 1`.
//!
//! Sums are accumulated per fixed-size block with pairwise summation and the
//! block sums are combined in block order, so results do not depend on how
//! blocks were scheduled across threads.

mod quadrature;

pub use quadrature::{gauss_legendre, pairwise_sum, TensorRule};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::diffops::{Calculus, VectorField};
use crate::expr::{DiffCache, EvalError, Expr, Tape};
use crate::geometry::{ChartMetric, GeometryError, Validity};

/// Nodes per summation block.
const BLOCK: usize = 2048;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("box bounds must satisfy lower < upper on every axis (axis {axis})")]
    InvalidBox { axis: usize },
    #[error("radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("quadrature order must be at least 1")]
    InvalidOrder,
    #[error("domain has dimension {domain} but the metric has dimension {metric}")]
    Dimension { domain: usize, metric: usize },
    #[error("boundary map misses the level set at t = {param:?}: φ(P(t)) = {residual:e}")]
    OffBoundary { param: Vec<f64>, residual: f64 },
    #[error("evaluation failed at node {at:?}: {source}")]
    Node { at: Vec<f64>, source: EvalError },
    #[error("node {at:?} lies outside the chart's validity region")]
    OutsideValidity { at: Vec<f64> },
    #[error("metric is not positive definite at node {at:?}")]
    Metric { at: Vec<f64> },
    #[error("degenerate boundary Jacobian at {at:?}")]
    DegenerateBoundary { at: Vec<f64> },
    #[error("level-set gradient vanishes at boundary point {at:?}")]
    DegenerateNormal { at: Vec<f64> },
    #[error("normal at {at:?} does not point outward")]
    Inward { at: Vec<f64> },
    #[error("point {at:?} is not on the boundary of the domain")]
    NotOnBoundary { at: Vec<f64> },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Gauss–Legendre orders per axis for volume and boundary integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSpec {
    pub volume: usize,
    pub boundary: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { volume: 16, boundary: 24 }
    }
}

impl QuadratureSpec {
    pub fn new(volume: usize, boundary: usize) -> Result<Self, MeasureError> {
        if volume == 0 || boundary == 0 {
            return Err(MeasureError::InvalidOrder);
        }
        Ok(QuadratureSpec { volume, boundary })
    }

    /// Same order for volume and boundary.
    pub fn uniform(q: usize) -> Result<Self, MeasureError> {
        QuadratureSpec::new(q, q)
    }
}

/// Panel subdivision of the angular parameters of a ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AngularPanels {
    pub polar: usize,
    pub azimuth: usize,
}

impl Default for AngularPanels {
    fn default() -> Self {
        AngularPanels { polar: 2, azimuth: 4 }
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Star {
        phi: Expr,
        center: Vec<f64>,
        /// `P(t)` followed by `∂P_i/∂t_a` at `n + i*(n−1) + a`.
        patch: Tape,
        panels: Vec<(Vec<f64>, Vec<f64>)>,
        bounds: (Vec<f64>, Vec<f64>),
    },
}

/// A compact region of the chart with smooth (or box) boundary.
#[derive(Debug, Clone)]
pub struct Domain {
    n: usize,
    kind: &'static str,
    shape: Shape,
}

/// One boundary quadrature node.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPointData {
    pub x: Vec<f64>,
    /// Covariant outward unit normal.
    pub normal: Vec<f64>,
    /// Induced surface density at the node.
    pub density: f64,
}

impl Domain {
    /// Axis-aligned box `[lower_i, upper_i]`.
    pub fn cuboid(lower: Vec<f64>, upper: Vec<f64>) -> Result<Domain, MeasureError> {
        if lower.len() != upper.len() {
            return Err(MeasureError::Dimension { domain: lower.len(), metric: upper.len() });
        }
        if let Some(axis) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(MeasureError::InvalidBox { axis: axis + 1 });
        }
        Ok(Domain { n: lower.len(), kind: "box", shape: Shape::Box { lower, upper } })
    }

    /// `[0, 1]^n`.
    pub fn unit_box(n: usize) -> Domain {
        Domain::cuboid(vec![0.0; n], vec![1.0; n]).expect("unit box is valid")
    }

    /// Closed ball `|x − c| ≤ r` in chart coordinates.
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Domain, MeasureError> {
        Domain::ball_with_panels(center, radius, AngularPanels::default())
    }

    pub fn ball_with_panels(center: Vec<f64>, radius: f64, panels: AngularPanels) -> Result<Domain, MeasureError> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(MeasureError::InvalidRadius(radius));
        }
        let n = center.len();
        let x = Expr::coordinates(n);
        let phi = Expr::sum(x.iter().zip(&center).map(|(xi, &c)| Expr::square(xi - c))) - radius * radius;
        let omega = hyperspherical(n);
        let map: Vec<Expr> = omega.iter().zip(&center).map(|(w, &c)| c + radius * w).collect();
        let pi = std::f64::consts::PI;
        let mut axes: Vec<Vec<(f64, f64)>> = Vec::new();
        for a in 0..n - 1 {
            let (span, count) = if a + 1 == n - 1 { (2.0 * pi, panels.azimuth) } else { (pi, panels.polar) };
            let count = count.max(1);
            axes.push((0..count).map(|k| (span * k as f64 / count as f64, span * (k + 1) as f64 / count as f64)).collect());
        }
        let mut boxes = vec![(Vec::new(), Vec::new())];
        for axis in &axes {
            let mut next = Vec::new();
            for (lo, hi) in &boxes {
                for &(a, b) in axis {
                    let mut lo = lo.clone();
                    let mut hi = hi.clone();
                    lo.push(a);
                    hi.push(b);
                    next.push((lo, hi));
                }
            }
            boxes = next;
        }
        let lower = center.iter().map(|c| c - radius).collect();
        let upper = center.iter().map(|c| c + radius).collect();
        Domain::star_shaped_with_bounds("ball", phi, center, map, boxes, (lower, upper))
    }

    /// The chart cap `|x| ≤ r`.
    pub fn cap(n: usize, radius: f64) -> Result<Domain, MeasureError> {
        let mut d = Domain::ball(vec![0.0; n], radius)?;
        d.kind = "cap";
        Ok(d)
    }

    /// A region `{φ ≤ 0}` that is star-shaped about `center`, with boundary
    /// map `P` over the given parameter panels (`Var(a)` is parameter `a`).
    pub fn star_shaped(
        phi: Expr,
        center: Vec<f64>,
        map: Vec<Expr>,
        panels: Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Domain, MeasureError> {
        let n = center.len();
        let patch = Tape::compile(&map);
        let mut lower = center.clone();
        let mut upper = center.clone();
        for (lo, hi) in &panels {
            let rule = TensorRule::new(&vec![5; n - 1], lo, hi);
            let mut t = vec![0.0; n - 1];
            for k in 0..rule.len() {
                rule.node(k, &mut t);
                let p = patch.eval(&t)?;
                for i in 0..n {
                    lower[i] = lower[i].min(p[i]);
                    upper[i] = upper[i].max(p[i]);
                }
            }
        }
        for i in 0..n {
            let pad = 0.05 * (upper[i] - lower[i]);
            lower[i] -= pad;
            upper[i] += pad;
        }
        Domain::star_shaped_with_bounds("star", phi, center, map, panels, (lower, upper))
    }

    fn star_shaped_with_bounds(
        kind: &'static str,
        phi: Expr,
        center: Vec<f64>,
        map: Vec<Expr>,
        panels: Vec<(Vec<f64>, Vec<f64>)>,
        bounds: (Vec<f64>, Vec<f64>),
    ) -> Result<Domain, MeasureError> {
        let n = center.len();
        if map.len() != n {
            return Err(MeasureError::Dimension { domain: map.len(), metric: n });
        }
        let mut cache = DiffCache::new();
        let mut roots = map.clone();
        for p in &map {
            for a in 0..n - 1 {
                roots.push(cache.diff(p, a));
            }
        }
        let patch = Tape::compile(&roots);
        let phi_tape = Tape::compile(std::slice::from_ref(&phi));
        for (lo, hi) in &panels {
            let rule = TensorRule::new(&vec![3; n - 1], lo, hi);
            let mut t = vec![0.0; n - 1];
            for k in 0..rule.len() {
                rule.node(k, &mut t);
                let p = patch.eval(&t)?;
                let residual = phi_tape.eval(&p[..n])?[0];
                if residual.abs() > 1e-10 {
                    return Err(MeasureError::OffBoundary { param: t.clone(), residual });
                }
            }
        }
        Ok(Domain { n, kind, shape: Shape::Star { phi, center, patch, panels, bounds } })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `"box"`, `"ball"`, `"cap"` or `"star"`.
    pub fn kind(&self) -> &'static str {
        self.kind
    }

    /// Axis-aligned bounds enclosing the domain.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Box { lower, upper } => (lower.clone(), upper.clone()),
            Shape::Star { bounds, .. } => bounds.clone(),
        }
    }

    /// Strict interior test.
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.shape {
            Shape::Box { lower, upper } => Validity::Box { lower: lower.clone(), upper: upper.clone() }.contains(x),
            Shape::Star { phi, .. } => phi.eval(x).map(|v| v < 0.0).unwrap_or(false),
        }
    }

    /// Whether the closed domain lies inside an (open) validity region.
    ///
    /// Boxes are tested at their corners, which suffices for the convex
    /// regions a [`Validity`] describes. Star-shaped domains are tested on a
    /// grid of boundary points including panel corners.
    pub fn fits_in(&self, validity: &Validity) -> bool {
        match &self.shape {
            Shape::Box { lower, upper } => (0..1usize << self.n).all(|mask| {
                let corner: Vec<f64> =
                    (0..self.n).map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] }).collect();
                validity.contains(&corner)
            }),
            Shape::Star { patch, panels, .. } => {
                let n = self.n;
                panels.iter().all(|(lo, hi)| {
                    let axes: Vec<Vec<f64>> = (0..n - 1)
                        .map(|a| {
                            let (mut t, _) = gauss_legendre(8, lo[a], hi[a]);
                            t.push(lo[a]);
                            t.push(hi[a]);
                            t
                        })
                        .collect();
                    let total: usize = axes.iter().map(Vec::len).product();
                    (0..total).all(|mut k| {
                        let mut t = vec![0.0; n - 1];
                        for a in (0..n - 1).rev() {
                            t[a] = axes[a][k % axes[a].len()];
                            k /= axes[a].len();
                        }
                        patch.eval(&t).map(|p| validity.contains(&p[..n])).unwrap_or(false)
                    })
                })
            }
        }
    }

    /// Level-set function for star-shaped domains.
    pub fn level_set(&self) -> Option<&Expr> {
        match &self.shape {
            Shape::Box { .. } => None,
            Shape::Star { phi, .. } => Some(phi),
        }
    }

    fn check_metric(&self, metric: &ChartMetric) -> Result<(), MeasureError> {
        if metric.n() != self.n {
            return Err(MeasureError::Dimension { domain: self.n, metric: metric.n() });
        }
        Ok(())
    }
}

/// Unit vector on `S^{n−1}` in hyperspherical angles `t1..t_{n−1}`.
fn hyperspherical(n: usize) -> Vec<Expr> {
    let t: Vec<Expr> = (0..n - 1).map(Expr::var).collect();
    let mut out = Vec::with_capacity(n);
    let mut sines = Expr::one();
    for k in 0..n - 1 {
        out.push(&sines * Expr::cos(t[k].clone()));
        sines = sines * Expr::sin(t[k].clone());
    }
    out.push(sines);
    out
}

/// Something that can be evaluated at quadrature nodes.
///
/// Volume integrands receive the chart point `x`; boundary integrands
/// receive `x` followed by the covariant normal `ν`.
pub trait Integrand: Sync {
    fn outputs(&self) -> usize;
    fn eval(&self, input: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) -> Result<(), EvalError>;
}

impl Integrand for Tape {
    fn outputs(&self) -> usize {
        Tape::outputs(self)
    }

    fn eval(&self, input: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) -> Result<(), EvalError> {
        self.eval_into(input, scratch, out)
    }
}

/// A scalar closure as an [`Integrand`].
pub struct ScalarFn<F>(pub F);

impl<F> Integrand for ScalarFn<F>
where
    F: Fn(&[f64]) -> Result<f64, EvalError> + Sync,
{
    fn outputs(&self) -> usize {
        1
    }

    fn eval(&self, input: &[f64], _: &mut Vec<f64>, out: &mut [f64]) -> Result<(), EvalError> {
        out[0] = (self.0)(input)?;
        Ok(())
    }
}

#[derive(Default)]
struct Scratch {
    t: Vec<f64>,
    input: Vec<f64>,
    patch: Vec<f64>,
    metric: Vec<f64>,
    tape: Vec<f64>,
    aux: Vec<f64>,
}

/// Sum `node` contributions over `0..len` in blocks, deterministically.
fn accumulate<G>(len: usize, outputs: usize, node: G) -> Result<Vec<f64>, MeasureError>
where
    G: Fn(usize, &mut Scratch, &mut [f64]) -> Result<(), MeasureError> + Sync,
{
    let blocks = len.div_ceil(BLOCK);
    let partial: Vec<Result<Vec<f64>, MeasureError>> = (0..blocks)
        .into_par_iter()
        .map_init(Scratch::default, |scratch, b| {
            let start = b * BLOCK;
            let count = BLOCK.min(len - start);
            let mut buf = vec![0.0; count * outputs];
            let mut out = vec![0.0; outputs];
            for k in 0..count {
                node(start + k, scratch, &mut out)?;
                for (o, v) in out.iter().enumerate() {
                    buf[o * count + k] = *v;
                }
            }
            Ok((0..outputs).map(|o| pairwise_sum(&buf[o * count..(o + 1) * count])).collect())
        })
        .collect();
    let partial: Vec<Vec<f64>> = partial.into_iter().collect::<Result<_, _>>()?;
    Ok((0..outputs)
        .map(|o| {
            let column: Vec<f64> = partial.iter().map(|p| p[o]).collect();
            pairwise_sum(&column)
        })
        .collect())
}

fn node_error(at: &[f64]) -> impl FnOnce(EvalError) -> MeasureError + '_ {
    move |source| MeasureError::Node { at: at.to_vec(), source }
}

/// `∫_D f dV` for every output of `f`.
pub fn integrate_volume(
    f: &dyn Integrand,
    domain: &Domain,
    metric: &ChartMetric,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>, MeasureError> {
    domain.check_metric(metric)?;
    let n = domain.n;
    let outputs = f.outputs();
    let density = Tape::compile(std::slice::from_ref(metric.sqrt_det()));
    let validity = metric.validity();
    let weighted = |x: &[f64], w: f64, s: &mut Scratch, out: &mut [f64]| -> Result<(), MeasureError> {
        if !validity.contains(x) {
            return Err(MeasureError::OutsideValidity { at: x.to_vec() });
        }
        let mut d = [0.0];
        density.eval_into(x, &mut s.tape, &mut d).map_err(node_error(x))?;
        f.eval(x, &mut s.tape, out).map_err(node_error(x))?;
        let scale = w * d[0];
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(())
    };
    match &domain.shape {
        Shape::Box { lower, upper } => {
            let rule = TensorRule::new(&vec![spec.volume; n], lower, upper);
            accumulate(rule.len(), outputs, |k, s, out| {
                let mut x = std::mem::take(&mut s.input);
                x.resize(n, 0.0);
                let w = rule.node(k, &mut x);
                let r = weighted(&x, w, s, out);
                s.input = x;
                r
            })
        }
        Shape::Star { center, patch, panels, .. } => {
            let mut totals = vec![0.0; outputs];
            let mut per_panel = Vec::with_capacity(panels.len());
            for (lo, hi) in panels {
                let mut lower = vec![0.0];
                let mut upper = vec![1.0];
                lower.extend_from_slice(lo);
                upper.extend_from_slice(hi);
                let rule = TensorRule::new(&vec![spec.volume; n], &lower, &upper);
                let sums = accumulate(rule.len(), outputs, |k, s, out| {
                    let mut t = std::mem::take(&mut s.t);
                    let mut p = std::mem::take(&mut s.patch);
                    let mut x = std::mem::take(&mut s.input);
                    t.resize(n, 0.0);
                    p.resize(patch.outputs(), 0.0);
                    x.resize(n, 0.0);
                    let w = rule.node(k, &mut t);
                    let rho = t[0];
                    let r = patch.eval_into(&t[1..], &mut s.tape, &mut p).map_err(node_error(&t)).and_then(|_| {
                        let mut m = vec![0.0; n * n];
                        for i in 0..n {
                            x[i] = center[i] + rho * (p[i] - center[i]);
                            m[i * n] = p[i] - center[i];
                            for a in 0..n - 1 {
                                m[i * n + 1 + a] = p[n + i * (n - 1) + a];
                            }
                        }
                        let jac = DMatrix::from_row_slice(n, n, &m).determinant().abs() * rho.powi(n as i32 - 1);
                        weighted(&x, w * jac, s, out)
                    });
                    s.t = t;
                    s.patch = p;
                    s.input = x;
                    r
                })?;
                per_panel.push(sums);
            }
            for (o, total) in totals.iter_mut().enumerate() {
                let column: Vec<f64> = per_panel.iter().map(|p| p[o]).collect();
                *total = pairwise_sum(&column);
            }
            Ok(totals)
        }
    }
}

/// Metric data at a boundary point: `g`, `g^{-1}`, and `∂φ` when present.
fn metric_tape(metric: &ChartMetric, phi: Option<&Expr>) -> Tape {
    let n = metric.n();
    let mut roots: Vec<Expr> = Vec::with_capacity(2 * n * n + n);
    for i in 0..n {
        for j in 0..n {
            roots.push(metric.g(i, j).clone());
        }
    }
    for i in 0..n {
        for j in 0..n {
            roots.push(metric.g_inv(i, j).clone());
        }
    }
    if let Some(phi) = phi {
        let mut cache = DiffCache::new();
        roots.extend((0..n).map(|i| cache.diff(phi, i)));
    }
    Tape::compile(&roots)
}

/// Enumerate boundary nodes as (point data, weight) and feed them to `visit`.
fn boundary_accumulate<V>(
    domain: &Domain,
    metric: &ChartMetric,
    spec: &QuadratureSpec,
    outputs: usize,
    visit: V,
) -> Result<Vec<f64>, MeasureError>
where
    V: Fn(&[f64], &[f64], f64, f64, &mut Scratch, &mut [f64]) -> Result<(), MeasureError> + Sync,
{
    domain.check_metric(metric)?;
    let n = domain.n;
    let validity = metric.validity();
    let mut per_patch: Vec<Vec<f64>> = Vec::new();
    match &domain.shape {
        Shape::Box { lower, upper } => {
            let mtape = metric_tape(metric, None);
            for axis in 0..n {
                for (side, bound) in [(-1.0, lower[axis]), (1.0, upper[axis])] {
                    let lo: Vec<f64> = (0..n).filter(|&i| i != axis).map(|i| lower[i]).collect();
                    let hi: Vec<f64> = (0..n).filter(|&i| i != axis).map(|i| upper[i]).collect();
                    let rule = TensorRule::new(&vec![spec.boundary; n - 1], &lo, &hi);
                    let sums = accumulate(rule.len(), outputs, |k, s, out| {
                        let mut t = std::mem::take(&mut s.t);
                        let mut x = std::mem::take(&mut s.input);
                        let mut m = std::mem::take(&mut s.metric);
                        t.resize(n - 1, 0.0);
                        x.resize(n, 0.0);
                        m.resize(mtape.outputs(), 0.0);
                        let w = rule.node(k, &mut t);
                        let mut a = 0;
                        for i in 0..n {
                            if i == axis {
                                x[i] = bound;
                            } else {
                                x[i] = t[a];
                                a += 1;
                            }
                        }
                        let r = (|| {
                            if !validity.contains(&x) {
                                return Err(MeasureError::OutsideValidity { at: x.clone() });
                            }
                            mtape.eval_into(&x, &mut s.tape, &mut m).map_err(node_error(&x))?;
                            let keep: Vec<usize> = (0..n).filter(|&i| i != axis).collect();
                            let minor = DMatrix::from_fn(n - 1, n - 1, |r, c| m[keep[r] * n + keep[c]]);
                            let det = if n == 1 { 1.0 } else { minor.determinant() };
                            let ginv = m[n * n + axis * n + axis];
                            if !(det > 0.0) || !(ginv > 0.0) {
                                return Err(MeasureError::Metric { at: x.clone() });
                            }
                            let mut nu = vec![0.0; n];
                            nu[axis] = side / ginv.sqrt();
                            visit(&x, &nu, det.sqrt(), w, s, out)
                        })();
                        s.t = t;
                        s.input = x;
                        s.metric = m;
                        r
                    })?;
                    per_patch.push(sums);
                }
            }
        }
        Shape::Star { phi, center, patch, panels, .. } => {
            let mtape = metric_tape(metric, Some(phi));
            for (lo, hi) in panels {
                let rule = TensorRule::new(&vec![spec.boundary; n - 1], lo, hi);
                let sums = accumulate(rule.len(), outputs, |k, s, out| {
                    let mut t = std::mem::take(&mut s.t);
                    let mut p = std::mem::take(&mut s.patch);
                    let mut m = std::mem::take(&mut s.metric);
                    t.resize(n - 1, 0.0);
                    p.resize(patch.outputs(), 0.0);
                    m.resize(mtape.outputs(), 0.0);
                    let w = rule.node(k, &mut t);
                    let r = (|| {
                        patch.eval_into(&t, &mut s.tape, &mut p).map_err(node_error(&t))?;
                        let x = &p[..n];
                        if !validity.contains(x) {
                            return Err(MeasureError::OutsideValidity { at: x.to_vec() });
                        }
                        mtape.eval_into(x, &mut s.tape, &mut m).map_err(node_error(x))?;
                        let g = DMatrix::from_row_slice(n, n, &m[..n * n]);
                        let jac = DMatrix::from_fn(n, n - 1, |i, a| p[n + i * (n - 1) + a]);
                        let gram = jac.transpose() * &g * &jac;
                        let det = gram.determinant();
                        if !(det > 0.0) {
                            return Err(MeasureError::DegenerateBoundary { at: x.to_vec() });
                        }
                        let dphi = &m[2 * n * n..];
                        let mut norm2 = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                norm2 += m[n * n + i * n + j] * dphi[i] * dphi[j];
                            }
                        }
                        if !(norm2 > 0.0) {
                            return Err(MeasureError::DegenerateNormal { at: x.to_vec() });
                        }
                        let norm = norm2.sqrt();
                        let nu: Vec<f64> = dphi.iter().map(|d| d / norm).collect();
                        let outward: f64 = (0..n).map(|i| nu[i] * (x[i] - center[i])).sum();
                        if !(outward > 0.0) {
                            return Err(MeasureError::Inward { at: x.to_vec() });
                        }
                        let x = x.to_vec();
                        visit(&x, &nu, det.sqrt(), w, s, out)
                    })();
                    s.t = t;
                    s.patch = p;
                    s.metric = m;
                    r
                })?;
                per_patch.push(sums);
            }
        }
    }
    Ok((0..outputs)
        .map(|o| {
            let column: Vec<f64> = per_patch.iter().map(|p| p[o]).collect();
            pairwise_sum(&column)
        })
        .collect())
}

/// `∫_{∂D} f dS` for every output of `f`; `f` receives `x` followed by `ν`.
pub fn integrate_boundary(
    f: &dyn Integrand,
    domain: &Domain,
    metric: &ChartMetric,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>, MeasureError> {
    let n = domain.n;
    boundary_accumulate(domain, metric, spec, f.outputs(), |x, nu, density, w, s, out| {
        let mut input = std::mem::take(&mut s.aux);
        input.clear();
        input.extend_from_slice(x);
        input.extend_from_slice(nu);
        let r = f.eval(&input, &mut s.tape, out).map_err(node_error(&input[..n]));
        s.aux = input;
        r?;
        out.iter_mut().for_each(|v| *v *= w * density);
        Ok(())
    })
}

/// All boundary nodes with their quadrature weights, sorted by position.
/// `weight × density` is the node's contribution to `∫ dS`.
pub fn boundary_nodes(
    domain: &Domain,
    metric: &ChartMetric,
    spec: &QuadratureSpec,
) -> Result<Vec<(BoundaryPointData, f64)>, MeasureError> {
    let collected = std::sync::Mutex::new(Vec::new());
    boundary_accumulate(domain, metric, spec, 1, |x, nu, density, w, _, out| {
        out[0] = 0.0;
        let data = BoundaryPointData { x: x.to_vec(), normal: nu.to_vec(), density };
        collected.lock().expect("collector poisoned").push((data, w));
        Ok(())
    })?;
    let mut nodes = collected.into_inner().expect("collector poisoned");
    nodes.sort_by(|a, b| a.0.x.partial_cmp(&b.0.x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(nodes)
}

/// Covariant outward unit normal at a boundary point.
pub fn outward_normal(domain: &Domain, metric: &ChartMetric, x: &[f64]) -> Result<Vec<f64>, MeasureError> {
    domain.check_metric(metric)?;
    let n = domain.n;
    let g = metric.matrix_at(x)?;
    let ginv = g.clone().try_inverse().ok_or_else(|| MeasureError::Metric { at: x.to_vec() })?;
    match &domain.shape {
        Shape::Box { lower, upper } => {
            for k in 0..n {
                for (side, bound) in [(-1.0, lower[k]), (1.0, upper[k])] {
                    if (x[k] - bound).abs() <= 1e-12 * (1.0 + bound.abs()) {
                        let mut nu = vec![0.0; n];
                        nu[k] = side / ginv[(k, k)].sqrt();
                        return Ok(nu);
                    }
                }
            }
            Err(MeasureError::NotOnBoundary { at: x.to_vec() })
        }
        Shape::Star { phi, center, .. } => {
            if phi.eval(x)?.abs() > 1e-9 {
                return Err(MeasureError::NotOnBoundary { at: x.to_vec() });
            }
            let grad: Vec<f64> = (0..n).map(|i| phi.diff(i).eval(x)).collect::<Result<_, _>>()?;
            let v = nalgebra::DVector::from_vec(grad.clone());
            let norm2 = (v.transpose() * &ginv * &v)[(0, 0)];
            if !(norm2 > 0.0) {
                return Err(MeasureError::DegenerateNormal { at: x.to_vec() });
            }
            let nu: Vec<f64> = grad.iter().map(|d| d / norm2.sqrt()).collect();
            let outward: f64 = (0..n).map(|i| nu[i] * (x[i] - center[i])).sum();
            if !(outward > 0.0) {
                return Err(MeasureError::Inward { at: x.to_vec() });
            }
            Ok(nu)
        }
    }
}

/// Both sides of the divergence theorem for a vector field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceCheck {
    pub volume: f64,
    pub flux: f64,
    pub residual: f64,
}

/// `|∫_D div w dV − ∫_{∂D} w^i ν_i dS|`.
pub fn divergence_theorem_residual(
    w: &VectorField,
    domain: &Domain,
    spec: &QuadratureSpec,
) -> Result<DivergenceCheck, MeasureError> {
    let metric = w.metric();
    let n = metric.n();
    let div = Calculus::new(metric.clone()).divergence(&w.components);
    let flux = Expr::sum((0..n).map(|i| &w.components[i] * Expr::var(n + i)));
    let volume = integrate_volume(&Tape::compile(&[div]), domain, metric, spec)?[0];
    let flux = integrate_boundary(&Tape::compile(&[flux]), domain, metric, spec)?[0];
    Ok(DivergenceCheck { volume, flux, residual: (volume - flux).abs() })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;

    fn metric(n: usize, factor: Expr, validity: Validity) -> Arc<ChartMetric> {
        let g = (0..n)
            .map(|i| (0..n).map(|j| if i == j { factor.clone() } else { Expr::zero() }).collect())
            .collect();
        Arc::new(ChartMetric::new("test", g, validity).unwrap())
    }

    fn one() -> Tape {
        Tape::compile(&[Expr::one()])
    }

    fn r2(n: usize) -> Expr {
        Expr::sum((0..n).map(|i| Expr::square(Expr::var(i))))
    }

    #[test]
    fn unit_box_volume_and_area() {
        let flat = metric(3, Expr::one(), Validity::Everywhere);
        let d = Domain::unit_box(3);
        let spec = QuadratureSpec::default();
        assert!((integrate_volume(&one(), &d, &flat, &spec).unwrap()[0] - 1.0).abs() < 1e-14);
        assert!((integrate_boundary(&one(), &d, &flat, &spec).unwrap()[0] - 6.0).abs() < 1e-13);
    }

    #[test]
    fn unit_ball_volume_and_area() {
        let flat = metric(3, Expr::one(), Validity::Everywhere);
        let d = Domain::ball(vec![0.0; 3], 1.0).unwrap();
        let spec = QuadratureSpec::default();
        let vol = integrate_volume(&one(), &d, &flat, &spec).unwrap()[0];
        assert!((vol / (4.0 * PI / 3.0) - 1.0).abs() < 1e-10, "{vol}");
        let area = integrate_boundary(&one(), &d, &flat, &spec).unwrap()[0];
        assert!((area / (4.0 * PI) - 1.0).abs() < 1e-10, "{area}");
        // (h, ν) with h = x: integrand x^i ν_i.
        let h_nu = Tape::compile(&[Expr::sum((0..3).map(|i| Expr::var(i) * Expr::var(3 + i)))]);
        let flux = integrate_boundary(&h_nu, &d, &flat, &spec).unwrap()[0];
        assert!((flux / (4.0 * PI) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hemisphere_area() {
        let sphere = metric(2, 4.0 / Expr::square(1.0 + r2(2)), Validity::Everywhere);
        let d = Domain::cap(2, 1.0).unwrap();
        let area = integrate_volume(&one(), &d, &sphere, &QuadratureSpec::default()).unwrap()[0];
        assert!((area - 2.0 * PI).abs() < 1e-8, "{area}");
    }

    #[test]
    fn normals() {
        let flat = metric(3, Expr::one(), Validity::Everywhere);
        let ball = Domain::ball(vec![0.0; 3], 1.0).unwrap();
        let nu = outward_normal(&ball, &flat, &[1.0, 0.0, 0.0]).unwrap();
        assert!((nu[0] - 1.0).abs() < 1e-15 && nu[1] == 0.0 && nu[2] == 0.0);
        let bx = Domain::unit_box(3);
        assert_eq!(outward_normal(&bx, &flat, &[1.0, 0.5, 0.5]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(outward_normal(&bx, &flat, &[0.5, 0.0, 0.5]).unwrap(), vec![0.0, -1.0, 0.0]);
        assert!(outward_normal(&bx, &flat, &[0.5, 0.5, 0.5]).is_err());
        // e^{2φ} δ with φ = 0.3 x1: ν_i = e^{φ} x_i / |x| on the unit sphere.
        let phi = 0.3 * Expr::var(0);
        let conf = metric(3, Expr::exp(2.0 * &phi), Validity::Everywhere);
        let p = [0.6, 0.0, 0.8];
        let nu = outward_normal(&ball, &conf, &p).unwrap();
        let e = (0.3f64 * 0.6).exp();
        for i in 0..3 {
            assert!((nu[i] - e * p[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn boundary_normals_are_unit_and_outward() {
        let sphere = metric(3, 4.0 / Expr::square(1.0 + r2(3)), Validity::Everywhere);
        let d = Domain::cap(3, 0.8).unwrap();
        let nodes = boundary_nodes(&d, &sphere, &QuadratureSpec::uniform(4).unwrap()).unwrap();
        assert!(!nodes.is_empty());
        for (data, _) in nodes {
            let g = sphere.matrix_at(&data.x).unwrap();
            let ginv = g.try_inverse().unwrap();
            let nu = nalgebra::DVector::from_vec(data.normal.clone());
            let norm = (nu.transpose() * ginv * &nu)[(0, 0)];
            assert!((norm - 1.0).abs() < 1e-10);
            let out: f64 = data.x.iter().zip(&data.normal).map(|(a, b)| a * b).sum();
            assert!(out > 0.0);
        }
    }

    #[test]
    fn divergence_theorem_for_dilation() {
        let flat = metric(3, Expr::one(), Validity::Everywhere);
        let d = Domain::ball(vec![0.0; 3], 1.0).unwrap();
        let h = VectorField::new(flat.clone(), Expr::coordinates(3), "dilation").unwrap();
        let check = divergence_theorem_residual(&h, &d, &QuadratureSpec::default()).unwrap();
        assert!(check.residual < 1e-9, "{check:?}");
        let zero = VectorField::new(flat, vec![Expr::zero(); 3], "zero").unwrap();
        assert_eq!(divergence_theorem_residual(&zero, &d, &QuadratureSpec::default()).unwrap().residual, 0.0);
    }

    #[test]
    fn polynomial_exactness_on_box() {
        let flat = metric(2, Expr::one(), Validity::Everywhere);
        let d = Domain::cuboid(vec![-1.0, 0.0], vec![2.0, 1.5]).unwrap();
        let q = 4;
        // x1^7 x2^7 is degree 7 per axis = 2q − 1.
        let f = Tape::compile(&[Expr::pow(Expr::var(0), 7.0) * Expr::pow(Expr::var(1), 7.0)]);
        let got = integrate_volume(&f, &d, &flat, &QuadratureSpec::uniform(q).unwrap()).unwrap()[0];
        let exact = (2f64.powi(8) - 1.0) / 8.0 * 1.5f64.powi(8) / 8.0;
        assert!(((got - exact) / exact).abs() < 1e-13);
    }

    #[test]
    fn fits_in_validity() {
        let open_ball = Validity::Ball { center: vec![0.0; 3], radius: 1.0 };
        assert!(Domain::cap(3, 0.6).unwrap().fits_in(&open_ball));
        assert!(!Domain::cap(3, 1.0).unwrap().fits_in(&open_ball));
        assert!(!Domain::unit_box(3).fits_in(&open_ball));
        assert!(Domain::cuboid(vec![0.0; 3], vec![0.5; 3]).unwrap().fits_in(&open_ball));
        assert!(Domain::unit_box(3).fits_in(&Validity::Everywhere));
    }

    #[test]
    fn invalid_domains() {
        assert!(matches!(Domain::cuboid(vec![0.0, 1.0], vec![1.0, 1.0]), Err(MeasureError::InvalidBox { axis: 2 })));
        assert!(Domain::ball(vec![0.0; 2], -1.0).is_err());
        assert!(QuadratureSpec::new(0, 4).is_err());
    }

    #[test]
    fn node_failures_report_location() {
        let flat = metric(2, Expr::one(), Validity::Everywhere);
        let f = Tape::compile(&[Expr::log(Expr::var(0))]);
        let d = Domain::cuboid(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let err = integrate_volume(&f, &d, &flat, &QuadratureSpec::uniform(2).unwrap()).unwrap_err();
        assert!(matches!(err, MeasureError::Node { .. }));
    }
}
