//! Scenario files.
//!
//! A scenario is line-oriented text made of `[section]` headers and
//! `key = value` entries. `#` starts a comment that runs to the end of the
//! line. Blank lines are ignored. The grammar is documented in
//! `book/src/scenarios.md`.

use std::fmt;
use std::sync::Arc;

use rellich::diffops::VectorField;
use rellich::expr::{parse_with, Expr, Symbols};
use rellich::geometry::{ChartMetric, Validity};
use rellich::identities::{Coefficients, IdentityId};
use rellich::measure::{Domain, QuadratureSpec};
use rellich::presets::{self, Loaded, MetricPreset, Param, Parameters};

/// A parse or validation error with a one-based source position.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// A piece of source text with its position.
#[derive(Debug, Clone, PartialEq)]
pub struct Spanned {
    pub text: String,
    pub line: usize,
    pub column: usize,
}

impl Spanned {
    fn error(&self, message: impl fmt::Display) -> ScenarioError {
        ScenarioError { line: self.line, column: self.column, message: message.to_string() }
    }
}

#[derive(Debug, Clone)]
struct Section {
    name: Spanned,
    entries: Vec<(Spanned, Spanned)>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&Spanned> {
        self.entries.iter().find(|(k, _)| k.text == key).map(|(_, v)| v)
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), ScenarioError> {
        for (k, _) in &self.entries {
            if !allowed.contains(&k.text.as_str()) {
                return Err(k.error(format!("unknown key `{}` in [{}]; expected one of {}", k.text, self.name.text, allowed.join(", "))));
            }
        }
        Ok(())
    }
}

const SECTIONS: [&str; 8] = ["scenario", "metric", "domain", "h", "u", "v", "F", "G"];
const SCENARIO_KEYS: [&str; 13] = [
    "name",
    "id",
    "tolerance",
    "quadrature",
    "volume_order",
    "boundary_order",
    "points",
    "seed",
    "m",
    "l",
    "a",
    "coefficients",
    "convergence",
];

/// Split source text into sections. Positions are one-based.
fn sections(src: &str) -> Result<Vec<Section>, ScenarioError> {
    let mut out: Vec<Section> = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        let column = raw[..indent].chars().count() + 1;
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or(ScenarioError { line, column, message: "missing `]`".into() })?.trim();
            let name = Spanned { text: name.to_string(), line, column: column + 1 };
            if !SECTIONS.contains(&name.text.as_str()) {
                return Err(name.error(format!("unknown section [{}]; expected one of {}", name.text, SECTIONS.join(", "))));
            }
            if out.iter().any(|s| s.name.text == name.text) {
                return Err(name.error(format!("duplicate section [{}]", name.text)));
            }
            out.push(Section { name, entries: Vec::new() });
            continue;
        }
        let Some(eq) = content.find('=') else {
            return Err(ScenarioError { line, column, message: "expected `key = value` or `[section]`".into() });
        };
        let key_text = content[..eq].trim();
        let value_raw = &content[eq + 1..];
        let value_text = value_raw.trim();
        let lead = value_raw.len() - value_raw.trim_start().len();
        let value_column = content[..eq + 1 + lead].chars().count() + 1;
        if key_text.is_empty() || !key_text.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ScenarioError { line, column, message: format!("malformed key `{key_text}`") });
        }
        if value_text.is_empty() {
            return Err(ScenarioError { line, column: value_column, message: format!("`{key_text}` has no value") });
        }
        let key = Spanned { text: key_text.to_string(), line, column };
        let value = Spanned { text: value_text.to_string(), line, column: value_column };
        let Some(section) = out.last_mut() else {
            return Err(key.error("entry before the first [section]"));
        };
        if section.get(&key.text).is_some() {
            return Err(key.error(format!("duplicate key `{}` in [{}]", key.text, section.name.text)));
        }
        section.entries.push((key, value));
    }
    Ok(out)
}

fn number(v: &Spanned) -> Result<f64, ScenarioError> {
    v.text.parse::<f64>().map_err(|_| v.error(format!("expected a number, found `{}`", v.text)))
}

fn count(v: &Spanned) -> Result<usize, ScenarioError> {
    v.text.parse::<usize>().map_err(|_| v.error(format!("expected a non-negative integer, found `{}`", v.text)))
}

/// `a, b, c` or `[a, b, c]`.
fn list(v: &Spanned) -> Result<Vec<f64>, ScenarioError> {
    let inner = v.text.strip_prefix('[').and_then(|s| s.strip_suffix(']')).unwrap_or(&v.text);
    inner
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| v.error(format!("expected a list of numbers, found `{}`", v.text))))
        .collect()
}

/// Parse an expression, shifting parser columns to file columns.
fn expression(v: &Spanned, symbols: &Symbols) -> Result<Expr, ScenarioError> {
    expression_at(&v.text, v.line, v.column, symbols)
}

fn expression_at(text: &str, line: usize, column: usize, symbols: &Symbols) -> Result<Expr, ScenarioError> {
    parse_with(text, symbols).map_err(|e| ScenarioError {
        line,
        column: column + e.column - 1,
        message: format!("in expression: {}", e.message),
    })
}

/// Comma-separated pieces of `v` with their file columns.
fn pieces(text: &str, column: usize, separator: char) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), separator))) {
        if c == separator {
            let piece = &text[start..i];
            let lead = piece.len() - piece.trim_start().len();
            out.push((piece.trim().to_string(), column + text[..start + lead].chars().count()));
            start = i + c.len_utf8();
        }
    }
    out
}

/// The metric of a scenario and whether it came from the catalog.
#[derive(Debug, Clone)]
pub struct MetricChoice {
    pub preset: MetricPreset,
    /// Set for expression-grid metrics, whose conformal exponent is unknown.
    pub custom: bool,
}

/// A validated scenario with every referenced object constructed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub ids: Vec<IdentityId>,
    pub tolerance: f64,
    pub quadrature: QuadratureSpec,
    pub points: usize,
    pub seed: u64,
    pub m: usize,
    pub l: usize,
    pub a: f64,
    pub coefficients: Coefficients,
    /// Quadrature orders of an optional convergence study.
    pub convergence: Vec<usize>,
    pub metric: MetricChoice,
    pub domain: Option<Domain>,
    pub h: Option<VectorField>,
    pub u: Option<Expr>,
    pub v: Option<Expr>,
    pub f: Option<Expr>,
    pub g: Option<Expr>,
    /// `section.key = value` lines in source order.
    pub echo: Vec<String>,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.metric.preset.n()
    }
}

/// Parse and validate scenario text. `default_name` is used when the file
/// has no `name` key.
pub fn parse_scenario(src: &str, default_name: &str) -> Result<Scenario, ScenarioError> {
    let sections = sections(src)?;
    let find = |name: &str| sections.iter().find(|s| s.name.text == name);
    let eof = ScenarioError { line: src.lines().count().max(1), column: 1, message: String::new() };
    let head = find("scenario").ok_or(ScenarioError { message: "missing [scenario] section".into(), ..eof.clone() })?;
    head.check_keys(&SCENARIO_KEYS)?;

    let ids_value = head.get("id").ok_or_else(|| head.name.error("[scenario] needs `id`"))?;
    let mut ids = Vec::new();
    for (text, column) in pieces(&ids_value.text, ids_value.column, ',') {
        let id: IdentityId = text.parse().map_err(|e| ScenarioError { line: ids_value.line, column, message: format!("{e}") })?;
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    let tolerance = match head.get("tolerance") {
        Some(v) => {
            let t = number(v)?;
            if !(t > 0.0) {
                return Err(v.error("tolerance must be positive"));
            }
            t
        }
        None => 1e-9,
    };
    let mut quadrature = QuadratureSpec::default();
    if let Some(v) = head.get("quadrature") {
        quadrature = QuadratureSpec::uniform(count(v)?).map_err(|e| v.error(e))?;
    }
    if let Some(v) = head.get("volume_order") {
        quadrature = QuadratureSpec::new(count(v)?, quadrature.boundary).map_err(|e| v.error(e))?;
    }
    if let Some(v) = head.get("boundary_order") {
        quadrature = QuadratureSpec::new(quadrature.volume, count(v)?).map_err(|e| v.error(e))?;
    }
    let int_or = |key: &str, default: usize| head.get(key).map(count).transpose().map(|v| v.unwrap_or(default));
    let points = int_or("points", 100)?;
    let seed = int_or("seed", 0)? as u64;
    let m = int_or("m", 1)?;
    let l = int_or("l", 0)?;
    let a = head.get("a").map(number).transpose()?.unwrap_or(0.5);
    let coefficients = match head.get("coefficients") {
        None => Coefficients::Derived,
        Some(v) => match v.text.as_str() {
            "derived" => Coefficients::Derived,
            "literal" => Coefficients::Literal,
            other => return Err(v.error(format!("coefficients must be `derived` or `literal`, found `{other}`"))),
        },
    };
    let convergence = match head.get("convergence") {
        None => Vec::new(),
        Some(v) => pieces(&v.text, v.column, ',')
            .into_iter()
            .map(|(t, column)| {
                t.parse::<usize>().ok().filter(|&q| q > 0).ok_or(ScenarioError {
                    line: v.line,
                    column,
                    message: format!("expected a positive quadrature order, found `{t}`"),
                })
            })
            .collect::<Result<_, _>>()?,
    };
    let name = head.get("name").map(|v| v.text.clone()).unwrap_or_else(|| default_name.to_string());

    let metric_section = find("metric").ok_or(ScenarioError { message: "missing [metric] section".into(), ..eof })?;
    let metric = build_metric(metric_section)?;
    let n = metric.preset.n();
    let coords = Symbols::coordinates(n);

    let domain = find("domain").map(|s| build_domain(s, &metric)).transpose()?;
    let h = find("h").map(|s| build_field(s, &metric)).transpose()?;
    let u = find("u").map(|s| build_scalar(s, &metric)).transpose()?;
    let v = find("v").map(|s| build_scalar(s, &metric)).transpose()?;
    let f = find("F")
        .map(|s| {
            s.check_keys(&["expr"])?;
            // F(x, p, q) with p = ∇u at Var(n..2n) and q = ∇v at Var(2n..3n).
            let mut symbols = coords.clone();
            for i in 0..n {
                symbols = symbols.with(&format!("p{}", i + 1), n + i).with(&format!("q{}", i + 1), 2 * n + i);
            }
            let e = s.get("expr").ok_or_else(|| s.name.error("[F] needs `expr`"))?;
            expression(e, &symbols)
        })
        .transpose()?;
    let g = find("G")
        .map(|s| {
            s.check_keys(&["expr"])?;
            let e = s.get("expr").ok_or_else(|| s.name.error("[G] needs `expr`"))?;
            expression(e, &Symbols::default().with("s", 0).with("t", 1))
        })
        .transpose()?;

    let echo = sections
        .iter()
        .flat_map(|s| s.entries.iter().map(move |(k, v)| format!("{}.{} = {}", s.name.text, k.text, v.text)))
        .collect();
    Ok(Scenario {
        name,
        ids,
        tolerance,
        quadrature,
        points,
        seed,
        m,
        l,
        a,
        coefficients,
        convergence,
        metric,
        domain,
        h,
        u,
        v,
        f,
        g,
        echo,
    })
}

/// Preset parameters: `[..]` is a list, a number is a number and anything
/// else is an expression in the coordinates.
fn parameters(section: &Section, n: Option<usize>) -> Result<Parameters, ScenarioError> {
    let mut params = Parameters::new();
    for (k, v) in &section.entries {
        if k.text == "preset" {
            continue;
        }
        let value = if v.text.starts_with('[') {
            Param::List(list(v)?)
        } else if let Ok(x) = v.text.parse::<f64>() {
            Param::Number(x)
        } else {
            let n = n.ok_or_else(|| v.error("expression parameters need `n` first"))?;
            Param::Expr(expression(v, &Symbols::coordinates(n))?)
        };
        params.insert(&k.text, value);
    }
    Ok(params)
}

fn build_metric(s: &Section) -> Result<MetricChoice, ScenarioError> {
    if let Some(g) = s.get("g") {
        s.check_keys(&["g", "radius"])?;
        let rows_text = pieces(&g.text, g.column, ';');
        let n = rows_text.len();
        let symbols = Symbols::coordinates(n);
        let mut rows = Vec::with_capacity(n);
        for (row, column) in &rows_text {
            let entries = pieces(row, *column, ',');
            if entries.len() != n {
                return Err(ScenarioError {
                    line: g.line,
                    column: *column,
                    message: format!("metric row has {} entries, expected {n}", entries.len()),
                });
            }
            rows.push(entries.iter().map(|(t, c)| expression_at(t, g.line, *c, &symbols)).collect::<Result<Vec<_>, _>>()?);
        }
        let validity = match s.get("radius") {
            Some(r) => Validity::Ball { center: vec![0.0; n], radius: number(r)? },
            None => Validity::Everywhere,
        };
        let metric = ChartMetric::new("custom", rows, validity).map_err(|e| g.error(e))?;
        let preset = MetricPreset { name: "custom".into(), metric: Arc::new(metric), conformal_exponent: Expr::zero() };
        return Ok(MetricChoice { preset, custom: true });
    }
    let name = s.get("preset").ok_or_else(|| s.name.error("[metric] needs `preset` or `g`"))?;
    s.check_keys(&["preset", "n", "psi"])?;
    let n = s.get("n").map(count).transpose()?;
    let params = parameters(s, n)?;
    match presets::load_preset(&name.text, &params, None).map_err(|e| name.error(e))? {
        Loaded::Metric(preset) => Ok(MetricChoice { preset, custom: false }),
        _ => Err(name.error(format!("`{}` is not a metric preset", name.text))),
    }
}

fn build_domain(s: &Section, metric: &MetricChoice) -> Result<Domain, ScenarioError> {
    let name = s.get("preset").ok_or_else(|| s.name.error("[domain] needs `preset`"))?;
    let n = metric.preset.n();
    let domain = match name.text.as_str() {
        "box" => {
            s.check_keys(&["preset", "lower", "upper"])?;
            let get = |k: &str| s.get(k).ok_or_else(|| s.name.error(format!("box domain needs `{k}`")));
            Domain::cuboid(list(get("lower")?)?, list(get("upper")?)?).map_err(|e| name.error(e))?
        }
        "ball" => {
            s.check_keys(&["preset", "center", "radius"])?;
            let center = s.get("center").map(list).transpose()?.unwrap_or_else(|| vec![0.0; n]);
            let radius = s.get("radius").map(number).transpose()?.unwrap_or(1.0);
            Domain::ball(center, radius).map_err(|e| name.error(e))?
        }
        _ => {
            let params = parameters(s, Some(n))?;
            return match presets::load_preset(&name.text, &params, Some(&metric.preset)).map_err(|e| name.error(e))? {
                Loaded::Domain(d) => Ok(d),
                _ => Err(name.error(format!("`{}` is not a domain preset", name.text))),
            };
        }
    };
    presets::domain_in(domain, &name.text, &metric.preset).map_err(|e| name.error(e))
}

fn build_field(s: &Section, metric: &MetricChoice) -> Result<VectorField, ScenarioError> {
    let n = metric.preset.n();
    if let Some(c) = s.get("components") {
        s.check_keys(&["components"])?;
        let symbols = Symbols::coordinates(n);
        let comps = pieces(&c.text, c.column, ',')
            .iter()
            .map(|(t, col)| expression_at(t, c.line, *col, &symbols))
            .collect::<Result<Vec<_>, _>>()?;
        if comps.len() != n {
            return Err(c.error(format!("h has {} components, expected {n}", comps.len())));
        }
        return VectorField::new(metric.preset.metric.clone(), comps, "h").map_err(|e| c.error(e));
    }
    let name = s.get("preset").ok_or_else(|| s.name.error("[h] needs `preset` or `components`"))?;
    if metric.custom {
        return Err(name.error("field presets need a catalog metric; give `components` instead"));
    }
    let params = parameters(s, Some(n))?;
    match presets::load_preset(&name.text, &params, Some(&metric.preset)).map_err(|e| name.error(e))? {
        Loaded::Field(f) => Ok(f.field),
        _ => Err(name.error(format!("`{}` is not a vector field preset", name.text))),
    }
}

fn build_scalar(s: &Section, metric: &MetricChoice) -> Result<Expr, ScenarioError> {
    let n = metric.preset.n();
    if let Some(e) = s.get("expr") {
        s.check_keys(&["expr"])?;
        return expression(e, &Symbols::coordinates(n));
    }
    let name = s.get("preset").ok_or_else(|| s.name.error(format!("[{}] needs `preset` or `expr`", s.name.text)))?;
    let params = parameters(s, Some(n))?;
    match presets::load_preset(&name.text, &params, Some(&metric.preset)).map_err(|e| name.error(e))? {
        Loaded::Scalar(e) => Ok(e),
        _ => Err(name.error(format!("`{}` is not a scalar preset", name.text))),
    }
}
