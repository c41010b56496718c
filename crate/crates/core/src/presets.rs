//! Named metrics, vector fields, scalar fields and domains with known
//! closed-form properties.
//!
//! Every metric here is conformally flat, `g = e^{2ψ} δ`, and carries its
//! exponent `ψ`. A Euclidean conformal field `h` with Euclidean factor `μ_δ`
//! stays conformal Killing for such a metric with
//! `μ_g = μ_δ + 2 h^k ∂_k ψ`; that is the declared factor each field preset
//! is checked against when it is loaded.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::diffops::{killing_diagnostics, Calculus, DiffopsError, KillingDiagnostics, VectorField};
use crate::expr::{multi_indices, Expr, Tape};
use crate::geometry::{ChartMetric, GeometryError, Validity};
use crate::measure::{Domain, MeasureError};
use crate::rng::{sample_ball, SplitMix64};

/// Points used to verify declared preset properties.
pub const CHECK_POINTS: usize = 50;
/// Tolerance for declared diagnostics.
pub const CHECK_TOLERANCE: f64 = 1e-9;
const CHECK_SEED: u64 = 0x005E_ED0F_CA7A_1060;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PresetError {
    #[error("unknown preset `{0}`")]
    Unknown(String),
    #[error("preset `{preset}` needs parameter `{name}`")]
    MissingParameter { preset: String, name: String },
    #[error("preset `{preset}`: parameter `{name}` {reason}")]
    BadParameter { preset: String, name: String, reason: String },
    #[error("preset `{preset}` does not match its declared properties: {detail}")]
    Declared { preset: String, detail: String },
    #[error("domain `{domain}` is not contained in the validity region of `{metric}` ({region})")]
    OutOfChart { domain: String, metric: String, region: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Diffops(#[from] DiffopsError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// A preset parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Number(f64),
    List(Vec<f64>),
    Expr(Expr),
}

/// Named parameters for [`load_preset`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parameters {
    values: BTreeMap<String, Param>,
}

impl Parameters {
    pub fn new() -> Self {
        Parameters::default()
    }

    pub fn with(mut self, name: &str, value: Param) -> Self {
        self.values.insert(name.to_string(), value);
        self
    }

    pub fn number(self, name: &str, value: f64) -> Self {
        self.with(name, Param::Number(value))
    }

    pub fn list(self, name: &str, value: Vec<f64>) -> Self {
        self.with(name, Param::List(value))
    }

    pub fn insert(&mut self, name: &str, value: Param) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.values.get(name)
    }

    fn number_or(&self, preset: &str, name: &str, default: Option<f64>) -> Result<f64, PresetError> {
        match self.values.get(name) {
            Some(Param::Number(v)) => Ok(*v),
            Some(Param::List(v)) if v.len() == 1 => Ok(v[0]),
            Some(_) => Err(bad(preset, name, "must be a number")),
            None => default.ok_or_else(|| missing(preset, name)),
        }
    }

    fn count(&self, preset: &str, name: &str, default: Option<usize>) -> Result<usize, PresetError> {
        let v = self.number_or(preset, name, default.map(|d| d as f64))?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(bad(preset, name, "must be a non-negative integer"));
        }
        Ok(v as usize)
    }

    fn list_or(&self, preset: &str, name: &str) -> Result<Vec<f64>, PresetError> {
        match self.values.get(name) {
            Some(Param::List(v)) => Ok(v.clone()),
            Some(Param::Number(v)) => Ok(vec![*v]),
            Some(_) => Err(bad(preset, name, "must be a list of numbers")),
            None => Err(missing(preset, name)),
        }
    }
}

fn missing(preset: &str, name: &str) -> PresetError {
    PresetError::MissingParameter { preset: preset.into(), name: name.into() }
}

fn bad(preset: &str, name: &str, reason: &str) -> PresetError {
    PresetError::BadParameter { preset: preset.into(), name: name.into(), reason: reason.into() }
}

fn declared(preset: &str, detail: String) -> PresetError {
    PresetError::Declared { preset: preset.into(), detail }
}

/// A named metric `g = e^{2ψ} δ`.
#[derive(Debug, Clone)]
pub struct MetricPreset {
    pub name: String,
    pub metric: Arc<ChartMetric>,
    /// `ψ` with `g = e^{2ψ} δ`.
    pub conformal_exponent: Expr,
}

impl MetricPreset {
    pub fn n(&self) -> usize {
        self.metric.n()
    }
}

fn r2(n: usize) -> Expr {
    Expr::sum((0..n).map(|i| Expr::square(Expr::var(i))))
}

fn diagonal(n: usize, factor: &Expr) -> Vec<Vec<Expr>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { factor.clone() } else { Expr::zero() }).collect()).collect()
}

fn check_dimension(preset: &str, n: usize) -> Result<(), PresetError> {
    if n < 2 {
        return Err(bad(preset, "n", "must be at least 2"));
    }
    Ok(())
}

pub fn euclidean(n: usize) -> Result<MetricPreset, PresetError> {
    check_dimension("euclidean", n)?;
    let metric = ChartMetric::new(format!("euclidean({n})"), diagonal(n, &Expr::one()), Validity::Everywhere)?;
    Ok(MetricPreset { name: "euclidean".into(), metric: Arc::new(metric), conformal_exponent: Expr::zero() })
}

/// Default exponent for [`conformally_flat`]: `ψ = sin(x1)/4 + x_n²/10`.
pub fn default_conformal_exponent(n: usize) -> Expr {
    0.25 * Expr::sin(Expr::var(0)) + 0.1 * Expr::square(Expr::var(n - 1))
}

/// `g = e^{2ψ} δ`.
pub fn conformally_flat(n: usize, psi: Expr) -> Result<MetricPreset, PresetError> {
    check_dimension("conformally_flat", n)?;
    if psi.arity() > n {
        return Err(bad("conformally_flat", "psi", "uses coordinates beyond the dimension"));
    }
    let factor = Expr::exp(2.0 * &psi);
    let metric = ChartMetric::new(format!("conformally_flat({n}, ψ = {psi})"), diagonal(n, &factor), Validity::Everywhere)?;
    Ok(MetricPreset { name: "conformally_flat".into(), metric: Arc::new(metric), conformal_exponent: psi })
}

/// The unit sphere minus a pole, in stereographic coordinates:
/// `g = 4/(1 + |x|²)² δ`.
pub fn sphere_stereographic(n: usize) -> Result<MetricPreset, PresetError> {
    check_dimension("sphere_stereographic", n)?;
    let factor = 4.0 / Expr::square(1.0 + r2(n));
    let metric = ChartMetric::new(format!("sphere_stereographic({n})"), diagonal(n, &factor), Validity::Everywhere)?;
    let psi = Expr::constant(2f64.ln()) - Expr::log(1.0 + r2(n));
    let preset = MetricPreset { name: "sphere_stereographic".into(), metric: Arc::new(metric), conformal_exponent: psi };
    check_constant_curvature(&preset, (n * (n - 1)) as f64, 2.0)?;
    Ok(preset)
}

/// Hyperbolic space in the Poincaré ball: `g = 4/(1 − |x|²)² δ` on `|x| < 1`.
pub fn hyperbolic_ball(n: usize) -> Result<MetricPreset, PresetError> {
    check_dimension("hyperbolic_ball", n)?;
    let factor = 4.0 / Expr::square(1.0 - r2(n));
    let validity = Validity::Ball { center: vec![0.0; n], radius: 1.0 };
    let metric = ChartMetric::new(format!("hyperbolic_ball({n})"), diagonal(n, &factor), validity)?;
    let psi = Expr::constant(2f64.ln()) - Expr::log(1.0 - r2(n));
    let preset = MetricPreset { name: "hyperbolic_ball".into(), metric: Arc::new(metric), conformal_exponent: psi };
    check_constant_curvature(&preset, -((n * (n - 1)) as f64), 0.9)?;
    Ok(preset)
}

fn check_constant_curvature(preset: &MetricPreset, expected: f64, radius: f64) -> Result<(), PresetError> {
    let n = preset.n();
    let tape = Tape::compile(std::slice::from_ref(preset.metric.scalar_curvature()));
    for x in sample_ball(&vec![0.0; n], radius, 20, CHECK_SEED) {
        let r = tape.eval(&x).map_err(GeometryError::from)?[0];
        if (r - expected).abs() > CHECK_TOLERANCE {
            return Err(declared(&preset.name, format!("scalar curvature {r} at {x:?}, expected {expected}")));
        }
    }
    Ok(())
}

/// Sample points for property checks inside the metric's validity region.
pub fn check_points(metric: &ChartMetric, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = metric.n();
    match metric.validity() {
        Validity::Everywhere => sample_ball(&vec![0.0; n], 1.5, count, seed),
        Validity::Ball { center, radius } => sample_ball(center, 0.9 * radius, count, seed),
        Validity::Box { lower, upper } => {
            let mut rng = SplitMix64::new(seed);
            (0..count)
                .map(|_| {
                    lower
                        .iter()
                        .zip(upper)
                        .map(|(&a, &b)| {
                            let pad = 0.05 * (b - a);
                            rng.uniform(a + pad, b - pad)
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// A vector field preset with its declared and verified diagnostics.
#[derive(Debug, Clone)]
pub struct FieldPreset {
    pub name: String,
    pub field: VectorField,
    /// Declared conformal factor.
    pub expected_mu: Expr,
    pub diagnostics: KillingDiagnostics,
}

impl FieldPreset {
    /// Human summary derived from the diagnostics.
    pub fn property(&self) -> String {
        describe(&self.diagnostics)
    }
}

fn describe(d: &KillingDiagnostics) -> String {
    if !d.is_conformal(CHECK_TOLERANCE) {
        return format!("not conformal Killing (deviation {:.3e})", d.deviation);
    }
    if d.mu_spread() > CHECK_TOLERANCE {
        return "conformal, μ non-constant".into();
    }
    let mu = d.mu[0];
    if mu.abs() <= 1e-12 {
        "isometric".into()
    } else {
        format!("homothety, μ={}", (mu * 1e9).round() / 1e9)
    }
}

/// Build a field preset from Euclidean conformal data and verify it.
fn euclidean_conformal(
    name: &str,
    metric: &MetricPreset,
    components: Vec<Expr>,
    euclidean_mu: Expr,
) -> Result<FieldPreset, PresetError> {
    let n = metric.n();
    let psi = &metric.conformal_exponent;
    let h_psi = Expr::sum((0..n).map(|k| &components[k] * psi.diff(k)));
    let expected = euclidean_mu + 2.0 * h_psi;
    finish_field(name, metric, components, expected)
}

fn finish_field(name: &str, metric: &MetricPreset, components: Vec<Expr>, expected: Expr) -> Result<FieldPreset, PresetError> {
    let field = VectorField::new(metric.metric.clone(), components, name)?;
    let points = check_points(&metric.metric, CHECK_POINTS, CHECK_SEED);
    let diagnostics = killing_diagnostics(&field, &points)?;
    if diagnostics.deviation > CHECK_TOLERANCE {
        return Err(declared(name, format!("Killing deviation {:e} on {}", diagnostics.deviation, metric.name)));
    }
    let tape = Tape::compile(std::slice::from_ref(&expected));
    for (x, mu) in points.iter().zip(&diagnostics.mu) {
        let want = tape.eval(x).map_err(GeometryError::from)?[0];
        if (want - mu).abs() > CHECK_TOLERANCE {
            return Err(declared(name, format!("μ = {mu} at {x:?}, declared {want}")));
        }
    }
    Ok(FieldPreset { name: name.into(), field, expected_mu: expected, diagnostics })
}

/// `h = x^i ∂_i`.
pub fn dilation(metric: &MetricPreset) -> Result<FieldPreset, PresetError> {
    let n = metric.n();
    euclidean_conformal("dilation", metric, Expr::coordinates(n), Expr::constant(2.0))
}

/// `h = ∂_k` (`k` counts from 1).
pub fn translation(metric: &MetricPreset, k: usize) -> Result<FieldPreset, PresetError> {
    let n = metric.n();
    if k == 0 || k > n {
        return Err(bad("translation", "k", &format!("must be in 1..={n}")));
    }
    let h = (0..n).map(|i| if i + 1 == k { Expr::one() } else { Expr::zero() }).collect();
    euclidean_conformal("translation", metric, h, Expr::zero())
}

/// `h = −x2 ∂_1 + x1 ∂_2`.
pub fn rotation(metric: &MetricPreset) -> Result<FieldPreset, PresetError> {
    let n = metric.n();
    let mut h = vec![Expr::zero(); n];
    h[0] = -Expr::var(1);
    h[1] = Expr::var(0);
    euclidean_conformal("rotation", metric, h, Expr::zero())
}

/// `h^i = 2 x^i (b·x) − b^i |x|²`, Euclidean factor `μ_δ = 4 (b·x)`.
pub fn special_conformal(metric: &MetricPreset, b: &[f64]) -> Result<FieldPreset, PresetError> {
    let n = metric.n();
    if b.len() != n {
        return Err(bad("special_conformal", "b", &format!("must have {n} entries")));
    }
    let x = Expr::coordinates(n);
    let bx = Expr::sum((0..n).map(|i| b[i] * &x[i]));
    let h = (0..n).map(|i| 2.0 * &x[i] * &bx - b[i] * r2(n)).collect();
    euclidean_conformal("special_conformal", metric, h, 4.0 * bx)
}

/// The `k`-th ambient coordinate of the unit sphere in the stereographic
/// chart: `X_k = 2x_k/(1+|x|²)` for `k ≤ n`, `X_{n+1} = (1−|x|²)/(1+|x|²)`.
pub fn sphere_harmonic(n: usize, k: usize) -> Expr {
    let s = 1.0 + r2(n);
    if k <= n {
        2.0 * Expr::var(k - 1) / s
    } else {
        (1.0 - r2(n)) / s
    }
}

/// The raised gradient of [`sphere_harmonic`] on the sphere chart. Its
/// conformal factor is `−2 X_k`, an eigenfunction with `Δμ = −nμ`.
pub fn sphere_conformal(metric: &MetricPreset, k: usize) -> Result<FieldPreset, PresetError> {
    let n = metric.n();
    if metric.name != "sphere_stereographic" {
        return Err(bad("sphere_conformal", "metric", "requires sphere_stereographic"));
    }
    if k == 0 || k > n + 1 {
        return Err(bad("sphere_conformal", "k", &format!("must be in 1..={}", n + 1)));
    }
    let x_k = sphere_harmonic(n, k);
    let mut calc = Calculus::new(metric.metric.clone());
    let h = calc.gradient_vector(&x_k);
    let preset = finish_field("sphere_conformal", metric, h, -2.0 * &x_k)?;
    // Eigenfunction cross-check of the computed factor.
    let mu = calc.conformal_factor(&preset.field.components);
    let eig = calc.laplacian(&mu) + n as f64 * &mu;
    let tape = Tape::compile(&[eig]);
    for x in check_points(&metric.metric, 20, CHECK_SEED) {
        let r = tape.eval(&x).map_err(GeometryError::from)?[0];
        if r.abs() > 1e-8 {
            return Err(declared("sphere_conformal", format!("Δμ + nμ = {r:e} at {x:?}")));
        }
    }
    Ok(preset)
}

/// `∏ x_i^{e_i}`.
pub fn monomial(exponents: &[u32]) -> Expr {
    Expr::product(exponents.iter().enumerate().map(|(i, &e)| Expr::pow(Expr::var(i), e as f64)))
}

/// `Σ_k c_k |x|^{2k}`.
pub fn radial(n: usize, coefficients: &[f64]) -> Expr {
    let r = r2(n);
    Expr::sum(coefficients.iter().enumerate().map(|(k, &c)| c * Expr::pow(r.clone(), k as f64)))
}

/// `∏ sin(π x_i)`: vanishes with its Laplacian on the unit box boundary and
/// satisfies `Δu = −nπ² u`.
pub fn sine_product(n: usize) -> Expr {
    Expr::product((0..n).map(|i| Expr::sin(std::f64::consts::PI * Expr::var(i))))
}

/// `(1 − |x|²)^p`.
pub fn bump(n: usize, p: u32) -> Expr {
    Expr::pow(1.0 - r2(n), p as f64)
}

/// A polynomial of total degree `≤ degree` with coefficients uniform in
/// `[−1, 1]` drawn from [`SplitMix64`] in graded monomial order.
pub fn random_polynomial(n: usize, degree: usize, seed: u64) -> Expr {
    let mut rng = SplitMix64::new(seed);
    Expr::sum(multi_indices(n, degree).iter().map(|alpha| rng.uniform(-1.0, 1.0) * monomial(alpha)))
}

/// A named domain preset with a metric compatibility check.
pub fn domain_in(domain: Domain, label: &str, metric: &MetricPreset) -> Result<Domain, PresetError> {
    if domain.n() != metric.n() {
        return Err(PresetError::Measure(MeasureError::Dimension { domain: domain.n(), metric: metric.n() }));
    }
    if !domain.fits_in(metric.metric.validity()) {
        return Err(PresetError::OutOfChart {
            domain: label.into(),
            metric: metric.name.clone(),
            region: metric.metric.validity().to_string(),
        });
    }
    Ok(domain)
}

/// A loaded preset.
#[derive(Debug, Clone)]
pub enum Loaded {
    Metric(MetricPreset),
    Field(FieldPreset),
    Scalar(Expr),
    Domain(Domain),
}

/// Construct a preset by name. Fields and domains are built on `metric`
/// when given, otherwise on `euclidean(n)`.
pub fn load_preset(name: &str, params: &Parameters, metric: Option<&MetricPreset>) -> Result<Loaded, PresetError> {
    let dim = |default: Option<usize>| -> Result<usize, PresetError> {
        let d = metric.map(|m| m.n()).or(default);
        let n = params.count(name, "n", d)?;
        if let Some(m) = metric {
            if m.n() != n {
                return Err(bad(name, "n", &format!("differs from the metric dimension {}", m.n())));
            }
        }
        Ok(n)
    };
    let on_metric = |n: usize| -> Result<MetricPreset, PresetError> {
        match metric {
            Some(m) => Ok(m.clone()),
            None => euclidean(n),
        }
    };
    Ok(match name {
        "euclidean" => Loaded::Metric(euclidean(dim(None)?)?),
        "conformally_flat" => {
            let n = dim(None)?;
            let psi = match params.get("psi") {
                Some(Param::Expr(e)) => e.clone(),
                Some(Param::Number(c)) => Expr::constant(*c),
                Some(Param::List(_)) => return Err(bad(name, "psi", "must be an expression")),
                None => default_conformal_exponent(n),
            };
            Loaded::Metric(conformally_flat(n, psi)?)
        }
        "sphere_stereographic" => Loaded::Metric(sphere_stereographic(dim(None)?)?),
        "hyperbolic_ball" => Loaded::Metric(hyperbolic_ball(dim(None)?)?),
        "dilation" => Loaded::Field(dilation(&on_metric(dim(None)?)?)?),
        "translation" => {
            let m = on_metric(dim(None)?)?;
            Loaded::Field(translation(&m, params.count(name, "k", Some(1))?)?)
        }
        "rotation" => Loaded::Field(rotation(&on_metric(dim(None)?)?)?),
        "special_conformal" => {
            let m = on_metric(dim(None)?)?;
            let b = match params.get("b") {
                Some(_) => params.list_or(name, "b")?,
                None => {
                    let mut b = vec![0.0; m.n()];
                    b[0] = 1.0;
                    b
                }
            };
            Loaded::Field(special_conformal(&m, &b)?)
        }
        "sphere_conformal" => {
            let m = match metric {
                Some(m) => m.clone(),
                None => sphere_stereographic(dim(None)?)?,
            };
            Loaded::Field(sphere_conformal(&m, params.count(name, "k", Some(1))?)?)
        }
        "monomial" => {
            let e = params.list_or(name, "exponents")?;
            if e.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                return Err(bad(name, "exponents", "must be non-negative integers"));
            }
            Loaded::Scalar(monomial(&e.iter().map(|v| *v as u32).collect::<Vec<_>>()))
        }
        "radial" => Loaded::Scalar(radial(dim(None)?, &params.list_or(name, "coefficients")?)),
        "sine_product" => Loaded::Scalar(sine_product(dim(None)?)),
        "bump" => Loaded::Scalar(bump(dim(None)?, params.count(name, "p", Some(2))? as u32)),
        "random_polynomial" => {
            let n = dim(None)?;
            let degree = params.count(name, "degree", None)?;
            let seed = params.count(name, "seed", Some(0))? as u64;
            Loaded::Scalar(random_polynomial(n, degree, seed))
        }
        "unit_box" => {
            let n = dim(None)?;
            Loaded::Domain(domain_in(Domain::unit_box(n), name, &on_metric(n)?)?)
        }
        "unit_ball" => {
            let n = dim(None)?;
            Loaded::Domain(domain_in(Domain::ball(vec![0.0; n], 1.0)?, name, &on_metric(n)?)?)
        }
        "cap" => {
            let n = dim(None)?;
            let r = params.number_or(name, "r", Some(1.0))?;
            Loaded::Domain(domain_in(Domain::cap(n, r)?, name, &on_metric(n)?)?)
        }
        other => return Err(PresetError::Unknown(other.to_string())),
    })
}

/// One catalog entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresetInfo {
    pub name: &'static str,
    pub kind: &'static str,
    pub parameters: &'static str,
    pub properties: String,
}

impl fmt::Display for PresetInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<22} {:<7} {:<28} {}", self.name, self.kind, self.parameters, self.properties)
    }
}

/// The catalog in a fixed order. Field properties are derived from
/// diagnostics at listing time (on `euclidean(3)`, or the sphere chart for
/// `sphere_conformal`).
pub fn list_presets() -> Result<Vec<PresetInfo>, PresetError> {
    let flat = euclidean(3)?;
    let sphere = sphere_stereographic(3)?;
    let entry = |name, kind, parameters, properties: String| PresetInfo { name, kind, parameters, properties };
    Ok(vec![
        entry("euclidean", "metric", "n", "flat, R = 0".into()),
        entry("conformally_flat", "metric", "n, psi (expression)", "g = e^{2ψ} δ".into()),
        entry("sphere_stereographic", "metric", "n", "g = 4/(1+|x|²)² δ, R = n(n−1)".into()),
        entry("hyperbolic_ball", "metric", "n", "g = 4/(1−|x|²)² δ on |x| < 1, R = −n(n−1)".into()),
        entry("dilation", "field", "", dilation(&flat)?.property()),
        entry("translation", "field", "k", translation(&flat, 1)?.property()),
        entry("rotation", "field", "", rotation(&flat)?.property()),
        entry("special_conformal", "field", "b (list)", special_conformal(&flat, &[1.0, 0.0, 0.0])?.property()),
        entry(
            "sphere_conformal",
            "field",
            "k",
            format!("{} (sphere_stereographic), μ = −2X_k", sphere_conformal(&sphere, 1)?.property()),
        ),
        entry("monomial", "scalar", "exponents (list)", "∏ x_i^{e_i}".into()),
        entry("radial", "scalar", "n, coefficients (list)", "Σ c_k |x|^{2k}".into()),
        entry("sine_product", "scalar", "n", "∏ sin(πx_i), Δu = −nπ²u".into()),
        entry("bump", "scalar", "n, p", "(1 − |x|²)^p".into()),
        entry("random_polynomial", "scalar", "n, degree, seed", "seeded coefficients in [−1, 1]".into()),
        entry("unit_box", "domain", "n", "[0, 1]^n".into()),
        entry("unit_ball", "domain", "n", "|x| ≤ 1".into()),
        entry("cap", "domain", "n, r", "|x| ≤ r".into()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_is_flat() {
        let m = euclidean(3).unwrap();
        let c = m.metric.curvature(&[0.3, 0.1, -0.2]).unwrap();
        assert_eq!(c.scalar, 0.0);
    }

    #[test]
    fn dilation_diagnostics() {
        let f = dilation(&euclidean(3).unwrap()).unwrap();
        assert!(f.diagnostics.mu.iter().all(|&m| m == 2.0));
        assert!(f.diagnostics.div_h.iter().all(|&d| d == 3.0));
        assert!(f.diagnostics.is_homothety_normalized);
        assert_eq!(f.property(), "homothety, μ=2");
    }

    #[test]
    fn sphere_has_constant_curvature() {
        let m = sphere_stereographic(2).unwrap();
        for x in sample_ball(&[0.0, 0.0], 3.0, 20, 9) {
            assert!((m.metric.curvature(&x).unwrap().scalar - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn special_conformal_factor_is_linear() {
        let b = [0.5, -1.0, 0.25];
        let f = special_conformal(&euclidean(3).unwrap(), &b).unwrap();
        let pts = check_points(&f.field.metric().clone(), 50, 4);
        let d = killing_diagnostics(&f.field, &pts).unwrap();
        for (x, mu) in pts.iter().zip(d.mu) {
            let want = 4.0 * (b[0] * x[0] + b[1] * x[1] + b[2] * x[2]);
            assert!((mu - want).abs() < 1e-12);
        }
        assert_eq!(f.property(), "conformal, μ non-constant");
    }

    #[test]
    fn euclidean_fields_on_curved_metrics() {
        let metrics = [
            conformally_flat(3, default_conformal_exponent(3)).unwrap(),
            sphere_stereographic(3).unwrap(),
            hyperbolic_ball(3).unwrap(),
        ];
        for m in &metrics {
            dilation(m).unwrap();
            rotation(m).unwrap();
            special_conformal(m, &[0.0, 1.0, 0.0]).unwrap();
        }
        assert_eq!(rotation(&metrics[2]).unwrap().property(), "isometric");
        // ∂_1 stays conformal on the sphere chart, with μ = 2∂_1ψ.
        assert_eq!(translation(&metrics[1], 1).unwrap().property(), "conformal, μ non-constant");
    }

    #[test]
    fn sphere_conformal_fields() {
        for n in [2, 3] {
            let m = sphere_stereographic(n).unwrap();
            for k in 1..=n + 1 {
                let f = sphere_conformal(&m, k).unwrap();
                assert_eq!(f.property(), "conformal, μ non-constant");
            }
        }
        assert!(sphere_conformal(&euclidean(3).unwrap(), 1).is_err());
    }

    #[test]
    fn hyperbolic_domains_must_stay_inside() {
        let m = hyperbolic_ball(3).unwrap();
        let p = Parameters::new().number("r", 1.0);
        assert!(matches!(load_preset("cap", &p, Some(&m)), Err(PresetError::OutOfChart { .. })));
        let p = Parameters::new().number("r", 0.5);
        assert!(load_preset("cap", &p, Some(&m)).is_ok());
        assert!(load_preset("unit_box", &Parameters::new(), Some(&m)).is_err());
    }

    #[test]
    fn load_by_name() {
        let p = Parameters::new().number("n", 3.0);
        assert!(matches!(load_preset("euclidean", &p, None), Ok(Loaded::Metric(_))));
        match load_preset("dilation", &p, None).unwrap() {
            Loaded::Field(f) => assert_eq!(f.diagnostics.mu[0], 2.0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_preset("nope", &p, None), Err(PresetError::Unknown(_))));
        assert!(matches!(load_preset("euclidean", &Parameters::new(), None), Err(PresetError::MissingParameter { .. })));
        let s = load_preset("sphere_stereographic", &Parameters::new().number("n", 2.0), None).unwrap();
        assert!(matches!(s, Loaded::Metric(_)));
    }

    #[test]
    fn listing_is_stable() {
        let a = list_presets().unwrap();
        let b = list_presets().unwrap();
        assert_eq!(a, b);
        let dil = a.iter().find(|p| p.name == "dilation").unwrap();
        assert_eq!(dil.properties, "homothety, μ=2");
        let sc = a.iter().find(|p| p.name == "special_conformal").unwrap();
        assert_eq!(sc.properties, "conformal, μ non-constant");
    }

    #[test]
    fn random_polynomials_are_seeded() {
        let a = random_polynomial(3, 3, 5);
        let b = random_polynomial(3, 3, 5);
        let x = [0.2, 0.4, -0.1];
        assert_eq!(a.eval(&x).unwrap(), b.eval(&x).unwrap());
        assert_ne!(a.eval(&x).unwrap(), random_polynomial(3, 3, 6).eval(&x).unwrap());
    }
}
