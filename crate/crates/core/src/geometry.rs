//! Chart metrics and their curvature.
//!
//! A [`ChartMetric`] turns an `n × n` grid of expressions `g_ij` into
//! expression trees for the inverse metric, the volume density, the
//! Christoffel symbols and the Riemann, Ricci and scalar curvatures. All
//! derived expressions are built once, at construction.
//!
//! Sign convention:
//!
//! ```text
//! R^i_{jkl} = ∂_k Γ^i_{jl} − ∂_l Γ^i_{jk} + Γ^i_{ks} Γ^s_{jl} − Γ^i_{ls} Γ^s_{jk}
//! R_{jl}    = R^i_{jil}
//! R         = g^{jl} R_{jl}
//! ```
//!
//! With this choice the unit sphere has `R = n(n−1)`.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::expr::{DiffCache, EvalError, Expr, Tape};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("metric must be an n×n grid with n ≥ 2, got {rows} rows")]
    Shape { rows: usize },
    #[error("metric is not symmetric at {at:?}: g{i}{j} − g{j}{i} = {diff:e}")]
    Asymmetric { i: usize, j: usize, at: Vec<f64>, diff: f64 },
    #[error("metric is singular or not positive definite at {at:?} (det = {det:e})")]
    Singular { at: Vec<f64>, det: f64 },
    #[error("inverse metric check failed at {at:?}: |g^ik g_kj − δ| = {err:e}")]
    Inverse { at: Vec<f64>, err: f64 },
    #[error("point {at:?} lies outside the chart's validity region ({region})")]
    OutsideValidity { at: Vec<f64>, region: String },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Region of the chart where expressions may be evaluated. Balls and boxes
/// are open.
#[derive(Debug, Clone, PartialEq)]
pub enum Validity {
    Everywhere,
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl Validity {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Validity::Everywhere => true,
            Validity::Ball { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                r2 < radius * radius
            }
            Validity::Box { lower, upper } => {
                x.iter().zip(lower.iter().zip(upper)).all(|(v, (a, b))| a < v && v < b)
            }
        }
    }
}

impl std::fmt::Display for Validity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Validity::Everywhere => write!(f, "whole chart"),
            Validity::Ball { center, radius } => write!(f, "|x − {center:?}| < {radius}"),
            Validity::Box { lower, upper } => write!(f, "box {lower:?} < x < {upper:?}"),
        }
    }
}

/// Riemann, Ricci and scalar curvature at one chart point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureAtPoint {
    pub n: usize,
    /// `R^i_{jkl}` at `((i*n + j)*n + k)*n + l`.
    pub riemann: Vec<f64>,
    /// `R_{jl}`, row-major.
    pub ricci: Vec<f64>,
    /// `R^i_j = g^{ik} R_{kj}`, row-major.
    pub ricci_mixed: Vec<f64>,
    pub scalar: f64,
}

impl CurvatureAtPoint {
    pub fn riemann(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.riemann[((i * n + j) * n + k) * n + l]
    }

    pub fn ricci(&self, j: usize, l: usize) -> f64 {
        self.ricci[j * self.n + l]
    }

    pub fn ricci_mixed(&self, i: usize, j: usize) -> f64 {
        self.ricci_mixed[i * self.n + j]
    }
}

/// A Riemannian metric on a single coordinate chart.
pub struct ChartMetric {
    n: usize,
    label: String,
    validity: Validity,
    g: Vec<Expr>,
    g_inv: Vec<Expr>,
    det: Expr,
    sqrt_det: Expr,
    gamma: Vec<Expr>,
    riemann: Vec<Expr>,
    ricci: Vec<Expr>,
    ricci_mixed: Vec<Expr>,
    scalar: Expr,
    flat_coordinates: bool,
    metric_tape: Tape,
    curvature_tape: OnceLock<Tape>,
}

impl std::fmt::Debug for ChartMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChartMetric").field("label", &self.label).field("n", &self.n).finish()
    }
}

impl ChartMetric {
    /// Build from covariant components `g[i][j]`.
    pub fn new(label: impl Into<String>, g: Vec<Vec<Expr>>, validity: Validity) -> Result<Self, GeometryError> {
        let n = g.len();
        if n < 2 || g.iter().any(|row| row.len() != n) {
            return Err(GeometryError::Shape { rows: n });
        }
        let g: Vec<Expr> = g.into_iter().flatten().collect();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || g[i * n + j].is_zero()));
        let (g_inv, det) = if diagonal {
            let inv = (0..n * n)
                .map(|k| if k / n == k % n { Expr::one() / &g[k] } else { Expr::zero() })
                .collect();
            (inv, Expr::product((0..n).map(|i| g[i * n + i].clone())))
        } else {
            symbolic_inverse(&g, n)
        };
        let sqrt_det = if diagonal {
            Expr::product((0..n).map(|i| Expr::sqrt(g[i * n + i].clone())))
        } else {
            Expr::sqrt(det.clone())
        };
        let flat_coordinates = g.iter().all(|e| e.as_const().is_some());

        let mut cache = DiffCache::new();
        let dg: Vec<Expr> = (0..n * n * n).map(|k| cache.diff(&g[k / n], k % n)).collect();
        // dg[(i*n + j)*n + s] = ∂_s g_ij
        let d = |i: usize, j: usize, s: usize| &dg[(i * n + j) * n + s];
        let mut gamma = vec![Expr::zero(); n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let terms = (0..n).map(|s| {
                        let bracket = Expr::sum([d(s, j, i).clone(), d(s, i, j).clone(), -d(i, j, s)]);
                        &g_inv[k * n + s] * bracket
                    });
                    let value = 0.5 * Expr::sum(terms);
                    gamma[(k * n + i) * n + j] = value.clone();
                    gamma[(k * n + j) * n + i] = value;
                }
            }
        }

        let gm = |k: usize, i: usize, j: usize| &gamma[(k * n + i) * n + j];
        let mut riemann = vec![Expr::zero(); n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in (k + 1)..n {
                        let mut terms = vec![cache.diff(gm(i, j, l), k), -cache.diff(gm(i, j, k), l)];
                        for s in 0..n {
                            terms.push(gm(i, k, s) * gm(s, j, l));
                            terms.push(-(gm(i, l, s) * gm(s, j, k)));
                        }
                        let value = Expr::sum(terms);
                        riemann[((i * n + j) * n + l) * n + k] = -&value;
                        riemann[((i * n + j) * n + k) * n + l] = value;
                    }
                }
            }
        }
        let rm = |i: usize, j: usize, k: usize, l: usize| &riemann[((i * n + j) * n + k) * n + l];
        let ricci: Vec<Expr> = (0..n * n)
            .map(|jl| Expr::sum((0..n).map(|i| rm(i, jl / n, i, jl % n).clone())))
            .collect();
        let ricci_mixed: Vec<Expr> = (0..n * n)
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                Expr::sum((0..n).map(|k| &g_inv[i * n + k] * &ricci[k * n + j]))
            })
            .collect();
        let scalar = Expr::sum((0..n * n).map(|jl| &g_inv[jl] * &ricci[jl]));

        let mut roots = g.clone();
        roots.push(det.clone());
        let metric_tape = Tape::compile(&roots);
        Ok(ChartMetric {
            n,
            label: label.into(),
            validity,
            g,
            g_inv,
            det,
            sqrt_det,
            gamma,
            riemann,
            ricci,
            ricci_mixed,
            scalar,
            flat_coordinates,
            metric_tape,
            curvature_tape: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn validity(&self) -> &Validity {
        &self.validity
    }

    /// True when every `g_ij` is a constant (all Christoffel symbols vanish).
    pub fn is_constant(&self) -> bool {
        self.flat_coordinates
    }

    pub fn g(&self, i: usize, j: usize) -> &Expr {
        &self.g[i * self.n + j]
    }

    pub fn g_inv(&self, i: usize, j: usize) -> &Expr {
        &self.g_inv[i * self.n + j]
    }

    pub fn det(&self) -> &Expr {
        &self.det
    }

    pub fn sqrt_det(&self) -> &Expr {
        &self.sqrt_det
    }

    /// `Γ^k_{ij}`.
    pub fn gamma(&self, k: usize, i: usize, j: usize) -> &Expr {
        &self.gamma[(k * self.n + i) * self.n + j]
    }

    /// `R^i_{jkl}`.
    pub fn riemann(&self, i: usize, j: usize, k: usize, l: usize) -> &Expr {
        let n = self.n;
        &self.riemann[((i * n + j) * n + k) * n + l]
    }

    /// `R_{jl}`.
    pub fn ricci(&self, j: usize, l: usize) -> &Expr {
        &self.ricci[j * self.n + l]
    }

    /// `R^i_j`.
    pub fn ricci_mixed(&self, i: usize, j: usize) -> &Expr {
        &self.ricci_mixed[i * self.n + j]
    }

    pub fn scalar_curvature(&self) -> &Expr {
        &self.scalar
    }

    /// Check that `x` is admissible and return the metric matrix there.
    pub fn matrix_at(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        if !self.validity.contains(x) {
            return Err(GeometryError::OutsideValidity { at: x.to_vec(), region: self.validity.to_string() });
        }
        let values = self.metric_tape.eval(x)?;
        let n = self.n;
        let det = values[n * n];
        if !(det > 0.0) {
            return Err(GeometryError::Singular { at: x.to_vec(), det });
        }
        Ok(DMatrix::from_row_slice(n, n, &values[..n * n]))
    }

    /// `Γ^k_{ij}` at `x`, indexed `[k][i][j]`.
    pub fn christoffel(&self, x: &[f64]) -> Result<Vec<Vec<Vec<f64>>>, GeometryError> {
        self.matrix_at(x)?;
        let n = self.n;
        let flat = Tape::compile(&self.gamma).eval(x)?;
        Ok((0..n)
            .map(|k| (0..n).map(|i| (0..n).map(|j| flat[(k * n + i) * n + j]).collect()).collect())
            .collect())
    }

    pub fn curvature(&self, x: &[f64]) -> Result<CurvatureAtPoint, GeometryError> {
        self.matrix_at(x)?;
        let tape = self.curvature_tape.get_or_init(|| {
            let mut roots = self.riemann.clone();
            roots.extend(self.ricci.iter().cloned());
            roots.extend(self.ricci_mixed.iter().cloned());
            roots.push(self.scalar.clone());
            Tape::compile(&roots)
        });
        let mut v = tape.eval(x)?;
        let n = self.n;
        let scalar = v.pop().unwrap();
        let ricci_mixed = v.split_off(n.pow(4) + n * n);
        let ricci = v.split_off(n.pow(4));
        Ok(CurvatureAtPoint { n, riemann: v, ricci, ricci_mixed, scalar })
    }

    /// `√det g` at `x`.
    pub fn volume_density(&self, x: &[f64]) -> Result<f64, GeometryError> {
        Ok(self.matrix_at(x)?.determinant().sqrt())
    }

    /// Check symmetry, positivity and the inverse at each sample point.
    pub fn validate(&self, points: &[Vec<f64>]) -> Result<(), GeometryError> {
        let n = self.n;
        let inv_tape = Tape::compile(&self.g_inv);
        for x in points {
            let g = self.matrix_at(x)?;
            for i in 0..n {
                for j in (i + 1)..n {
                    let diff = g[(i, j)] - g[(j, i)];
                    if diff.abs() > 1e-14 * (1.0 + g[(i, j)].abs()) {
                        return Err(GeometryError::Asymmetric { i: i + 1, j: j + 1, at: x.clone(), diff });
                    }
                }
            }
            if g.clone().cholesky().is_none() {
                return Err(GeometryError::Singular { at: x.clone(), det: g.determinant() });
            }
            let inv = DMatrix::from_row_slice(n, n, &inv_tape.eval(x)?);
            let err = (&inv * &g - DMatrix::<f64>::identity(n, n)).amax();
            if err > 1e-12 {
                return Err(GeometryError::Inverse { at: x.clone(), err });
            }
        }
        Ok(())
    }
}

/// Cofactor inverse and determinant of a symbolic matrix.
fn symbolic_inverse(g: &[Expr], n: usize) -> (Vec<Expr>, Expr) {
    let mut memo = HashMap::new();
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: u32 = (1u32 << n) - 1;
    let det = minor(g, n, &all_rows, all_cols, &mut memo);
    let mut inv = vec![Expr::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            // (g^{-1})_{ij} = (−1)^{i+j} M_{ji} / det
            let rows: Vec<usize> = (0..n).filter(|&r| r != j).collect();
            let cols = all_cols & !(1 << i);
            let m = minor(g, n, &rows, cols, &mut memo);
            let signed = if (i + j) % 2 == 0 { m } else { -m };
            inv[i * n + j] = signed / &det;
        }
    }
    (inv, det)
}

/// Determinant of the submatrix with the given rows and column mask, by
/// expansion along the first listed row.
fn minor(g: &[Expr], n: usize, rows: &[usize], cols: u32, memo: &mut HashMap<(Vec<usize>, u32), Expr>) -> Expr {
    if rows.is_empty() {
        return Expr::one();
    }
    let key = (rows.to_vec(), cols);
    if let Some(e) = memo.get(&key) {
        return e.clone();
    }
    let r = rows[0];
    let mut terms = Vec::new();
    let mut sign = 1.0;
    for c in (0..n).filter(|c| cols & (1 << c) != 0) {
        let entry = &g[r * n + c];
        if !entry.is_zero() {
            let sub = minor(g, n, &rows[1..], cols & !(1 << c), memo);
            terms.push(sign * (entry * sub));
        }
        sign = -sign;
    }
    let out = Expr::sum(terms);
    memo.insert(key, out.clone());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conformal(n: usize, factor: Expr) -> ChartMetric {
        let g = (0..n)
            .map(|i| (0..n).map(|j| if i == j { factor.clone() } else { Expr::zero() }).collect())
            .collect();
        ChartMetric::new("test", g, Validity::Everywhere).unwrap()
    }

    fn r2(n: usize) -> Expr {
        Expr::sum((0..n).map(|i| Expr::square(Expr::var(i))))
    }

    #[test]
    fn euclidean_is_flat() {
        let m = conformal(3, Expr::one());
        assert!(m.is_constant());
        let c = m.curvature(&[0.2, 0.1, -0.4]).unwrap();
        assert!(c.riemann.iter().all(|&v| v == 0.0));
        assert_eq!(c.scalar, 0.0);
        assert_eq!(m.volume_density(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
    }

    #[test]
    fn exponential_factor_christoffels() {
        // e^{2 x1} δ in two dimensions.
        let m = conformal(2, Expr::exp(2.0 * Expr::var(0)));
        let gamma = m.christoffel(&[0.3, -0.2]).unwrap();
        assert!((gamma[0][0][0] - 1.0).abs() < 1e-14);
        assert!((gamma[0][1][1] + 1.0).abs() < 1e-14);
        assert!((gamma[1][0][1] - 1.0).abs() < 1e-14);
        assert!((gamma[1][1][0] - 1.0).abs() < 1e-14);
        assert!(gamma[1][0][0].abs() < 1e-14);
    }

    #[test]
    fn volume_density_of_conformal_factor() {
        let m = conformal(2, Expr::exp(2.0 * Expr::var(0)));
        let d = m.volume_density(&[1.0, 0.0]).unwrap();
        assert!((d - 1f64.exp().powi(2)).abs() < 1e-12);
        let sphere = conformal(2, 4.0 / Expr::square(1.0 + r2(2)));
        assert!((sphere.volume_density(&[0.0, 0.0]).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_christoffels_vanish_at_origin() {
        let sphere = conformal(3, 4.0 / Expr::square(1.0 + r2(3)));
        let gamma = sphere.christoffel(&[0.0, 0.0, 0.0]).unwrap();
        assert!(gamma.iter().flatten().flatten().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn curvature_signs() {
        let sphere = conformal(3, 4.0 / Expr::square(1.0 + r2(3)));
        let c = sphere.curvature(&[0.3, -0.5, 0.8]).unwrap();
        assert!((c.scalar - 6.0).abs() < 1e-9);
        let hyper = ChartMetric::new(
            "hyperbolic",
            (0..2)
                .map(|i| {
                    (0..2)
                        .map(|j| if i == j { 4.0 / Expr::square(1.0 - r2(2)) } else { Expr::zero() })
                        .collect()
                })
                .collect(),
            Validity::Ball { center: vec![0.0, 0.0], radius: 1.0 },
        )
        .unwrap();
        assert!((hyper.curvature(&[0.2, 0.4]).unwrap().scalar + 2.0).abs() < 1e-9);
        assert!(hyper.curvature(&[1.2, 0.0]).is_err());
    }

    #[test]
    fn general_metric_uses_cofactor_inverse() {
        let x = Expr::var(0);
        let g = vec![
            vec![2.0 + Expr::square(x.clone()), x.clone(), Expr::zero()],
            vec![x.clone(), Expr::constant(3.0), 0.5 * Expr::sin(Expr::var(1))],
            vec![Expr::zero(), 0.5 * Expr::sin(Expr::var(1)), 1.0 + Expr::square(Expr::var(2))],
        ];
        let m = ChartMetric::new("general", g, Validity::Everywhere).unwrap();
        m.validate(&[vec![0.3, 0.4, 0.5], vec![-1.0, 2.0, 0.1]]).unwrap();
        let c = m.curvature(&[0.3, 0.4, 0.5]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((c.ricci(i, j) - c.ricci(j, i)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn indefinite_metric_is_rejected() {
        let g = vec![vec![Expr::one(), Expr::zero()], vec![Expr::zero(), -Expr::one()]];
        let m = ChartMetric::new("bad", g, Validity::Everywhere).unwrap();
        assert!(matches!(m.volume_density(&[0.0, 0.0]), Err(GeometryError::Singular { .. })));
    }
}
