//! Turning a scenario into identity checks.

use std::time::{Duration, Instant};

use rellich::identities::{
    convergence_study, evaluate_integral, evaluate_pointwise, relative_residual, ConvergenceRow, IdentityError,
    IdentityId, IntegralCase, IntegralId, PointwiseCase, PointwiseId, Side, SubCheck,
};
use rellich::measure::QuadratureSpec;
use rellich::presets;
use rellich::rng::sample_interior;

use crate::scenario::Scenario;

/// Outcome class of one check, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Pass,
    Residual,
    Precondition,
    Input,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::Residual => 1,
            Status::Precondition => 2,
            Status::Input => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Residual => "residual",
            Status::Precondition => "precondition",
            Status::Input => "input",
        }
    }
}

/// A named term value in a check record.
#[derive(Debug, Clone, PartialEq)]
pub struct TermEntry {
    pub label: String,
    pub side: Side,
    pub value: f64,
}

/// One identity check of a scenario.
#[derive(Debug, Clone)]
pub struct CheckRecord {
    pub id: IdentityId,
    pub status: Status,
    /// Error text for rejected checks.
    pub message: Option<String>,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_residual: f64,
    pub rel_residual: f64,
    pub terms: Vec<TermEntry>,
    pub quadrature: Option<QuadratureSpec>,
    /// Evaluation points of a pointwise check.
    pub points: Option<usize>,
    pub sub_checks: Vec<SubCheck>,
    pub convergence: Vec<ConvergenceRow>,
    pub notes: Vec<String>,
    pub wall_time: Duration,
}

impl CheckRecord {
    fn rejected(id: IdentityId, error: &IdentityError, wall_time: Duration) -> CheckRecord {
        let status = if error.is_precondition() { Status::Precondition } else { Status::Input };
        CheckRecord {
            id,
            status,
            message: Some(error.to_string()),
            lhs: f64::NAN,
            rhs: f64::NAN,
            abs_residual: f64::NAN,
            rel_residual: f64::NAN,
            terms: Vec::new(),
            quadrature: None,
            points: None,
            sub_checks: Vec::new(),
            convergence: Vec::new(),
            notes: Vec::new(),
            wall_time,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// All checks of one scenario.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub echo: Vec<String>,
    pub tolerance: f64,
    pub checks: Vec<CheckRecord>,
    pub engine: &'static str,
}

impl RunReport {
    /// The most severe status among the checks.
    pub fn status(&self) -> Status {
        self.checks.iter().map(|c| c.status).max().unwrap_or(Status::Pass)
    }

    pub fn exit_code(&self) -> u8 {
        self.status().exit_code()
    }

    /// Largest residual used for pass/fail, sub-checks included; `None`
    /// when no check ran.
    pub fn worst_residual(&self) -> Option<f64> {
        self.checks
            .iter()
            .flat_map(|c| {
                let main = if c.points.is_some() { c.abs_residual } else { c.rel_residual };
                std::iter::once(main).chain(c.sub_checks.iter().map(|s| s.rel_residual))
            })
            .filter(|r| r.is_finite())
            .reduce(f64::max)
    }
}

/// Run every check of a scenario.
pub fn run_scenario(scenario: &Scenario) -> RunReport {
    let checks = scenario
        .ids
        .iter()
        .map(|&id| {
            let start = Instant::now();
            let result = match id {
                IdentityId::Pointwise(p) => pointwise(scenario, p),
                IdentityId::Integral(i) => integral(scenario, i),
            };
            result.unwrap_or_else(|e| CheckRecord::rejected(id, &e, start.elapsed()))
        })
        .collect();
    RunReport {
        scenario: scenario.name.clone(),
        echo: scenario.echo.clone(),
        tolerance: scenario.tolerance,
        checks,
        engine: rellich::VERSION,
    }
}

fn pointwise(s: &Scenario, id: PointwiseId) -> Result<CheckRecord, IdentityError> {
    let metric = s.metric.preset.metric.clone();
    let mut case = PointwiseCase::new(id, metric.clone()).with_l(s.l).with_m(s.m).with_coefficients(s.coefficients);
    if id != PointwiseId::V1 {
        let points = match &s.domain {
            Some(d) => sample_interior(d, s.points, s.seed).ok_or(IdentityError::Parameter {
                id: IdentityId::Pointwise(id),
                reason: "could not sample interior points of the domain".into(),
            })?,
            None => presets::check_points(&metric, s.points, s.seed),
        };
        case = case.with_points(points);
    }
    if let Some(d) = &s.domain {
        case = case.with_domain(d.clone());
    }
    if let Some(u) = &s.u {
        case = case.with_u(u.clone());
    }
    if let Some(v) = &s.v {
        case = case.with_v(v.clone());
    }
    if let Some(h) = &s.h {
        case = case.with_h(h.clone());
    }
    if let Some(f) = &s.f {
        case = case.with_f(f.clone());
    }
    let r = evaluate_pointwise(&case)?;
    let (lhs, rhs) = (r.lhs.get(r.worst).copied().unwrap_or(0.0), r.rhs.get(r.worst).copied().unwrap_or(0.0));
    let status = if r.passes(s.tolerance) { Status::Pass } else { Status::Residual };
    Ok(CheckRecord {
        id: IdentityId::Pointwise(id),
        status,
        message: None,
        lhs,
        rhs,
        abs_residual: r.max_residual,
        rel_residual: relative_residual(lhs, rhs, [lhs, rhs]),
        terms: Vec::new(),
        quadrature: None,
        points: Some(r.points.len()),
        sub_checks: Vec::new(),
        convergence: Vec::new(),
        notes: r.notes,
        wall_time: r.wall_time,
    })
}

fn integral(s: &Scenario, id: IntegralId) -> Result<CheckRecord, IdentityError> {
    let identity = IdentityId::Integral(id);
    let domain = s.domain.clone().ok_or(IdentityError::Missing { id: identity, input: "domain" })?;
    let u = s.u.clone().ok_or(IdentityError::Missing { id: identity, input: "u" })?;
    let mut case = IntegralCase::new(id, s.metric.preset.metric.clone(), domain, u)
        .with_m(s.m)
        .with_quadrature(s.quadrature)
        .with_coefficients(s.coefficients);
    case.seed = s.seed;
    if let Some(v) = &s.v {
        case = case.with_v(v.clone());
    }
    if let Some(h) = &s.h {
        case = case.with_h(h.clone());
    }
    if let Some(f) = &s.f {
        case = case.with_f(f.clone());
    }
    if let Some(g) = &s.g {
        case = case.with_g(g.clone(), s.a);
    }
    let r = evaluate_integral(&case)?;
    let convergence = if s.convergence.is_empty() { Vec::new() } else { convergence_study(&case, &s.convergence)?.rows };
    let status = if r.passes(s.tolerance) { Status::Pass } else { Status::Residual };
    Ok(CheckRecord {
        id: identity,
        status,
        message: None,
        lhs: r.lhs,
        rhs: r.rhs,
        abs_residual: r.abs_residual,
        rel_residual: r.rel_residual,
        terms: r.terms.iter().map(|t| TermEntry { label: t.label.clone(), side: t.side, value: t.value }).collect(),
        quadrature: r.quadrature,
        points: None,
        sub_checks: r.sub_checks,
        convergence,
        notes: r.notes,
        wall_time: r.wall_time,
    })
}
