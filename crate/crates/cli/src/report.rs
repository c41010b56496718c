//! Human tables and machine records.
//!
//! Machine output is JSON Lines, one record per check. Numbers carry 17
//! significant digits and non-finite values are `null`. Records contain no
//! timing, so identical scenarios produce byte-identical output.

use std::fmt::Write as _;

use rellich::identities::Side;
use serde_json::{Map, Number, Value};

use crate::run::{CheckRecord, RunReport, Status};

fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    // With `arbitrary_precision` every formatted digit is kept.
    let n: Number = serde_json::from_str(&format!("{x:.16e}")).expect("formatted float is a JSON number");
    Value::Number(n)
}

fn side(s: Side) -> &'static str {
    match s {
        Side::Lhs => "lhs",
        Side::Rhs => "rhs",
        Side::Auxiliary => "aux",
    }
}

/// The machine record of one check.
pub fn record(report: &RunReport, check: &CheckRecord) -> Value {
    let mut terms = Map::new();
    for t in &check.terms {
        let mut key = t.label.clone();
        let mut k = 2;
        while terms.contains_key(&key) {
            key = format!("{} #{k}", t.label);
            k += 1;
        }
        terms.insert(key, num(t.value));
    }
    let mut r = Map::new();
    r.insert("scenario".into(), Value::String(report.scenario.clone()));
    r.insert("engine".into(), Value::String(report.engine.into()));
    r.insert("id".into(), Value::String(check.id.name().into()));
    r.insert("lhs".into(), num(check.lhs));
    r.insert("rhs".into(), num(check.rhs));
    r.insert("abs_residual".into(), num(check.abs_residual));
    r.insert("rel_residual".into(), num(check.rel_residual));
    r.insert("terms".into(), Value::Object(terms));
    r.insert(
        "quadrature".into(),
        match check.quadrature {
            Some(q) => serde_json::json!({ "volume": q.volume, "boundary": q.boundary }),
            None => Value::Null,
        },
    );
    r.insert("pass".into(), Value::Bool(check.passed()));
    r.insert("status".into(), Value::String(check.status.label().into()));
    r.insert("tolerance".into(), num(report.tolerance));
    if let Some(p) = check.points {
        r.insert("points".into(), Value::from(p));
    }
    if !check.sub_checks.is_empty() {
        let subs = check
            .sub_checks
            .iter()
            .map(|c| {
                let mut m = Map::new();
                m.insert("label".into(), Value::String(c.label.clone()));
                m.insert("lhs".into(), num(c.lhs));
                m.insert("rhs".into(), num(c.rhs));
                m.insert("abs_residual".into(), num(c.abs_residual));
                m.insert("rel_residual".into(), num(c.rel_residual));
                Value::Object(m)
            })
            .collect();
        r.insert("sub_checks".into(), Value::Array(subs));
    }
    if !check.convergence.is_empty() {
        let rows = check
            .convergence
            .iter()
            .map(|row| {
                let mut m = Map::new();
                m.insert("order".into(), Value::from(row.order));
                m.insert("abs_residual".into(), num(row.abs_residual));
                m.insert("rel_residual".into(), num(row.rel_residual));
                Value::Object(m)
            })
            .collect();
        r.insert("convergence".into(), Value::Array(rows));
    }
    if let Some(msg) = &check.message {
        r.insert("message".into(), Value::String(msg.clone()));
    }
    Value::Object(r)
}

/// JSON Lines for every check of `report`.
pub fn machine(report: &RunReport) -> String {
    let mut out = String::new();
    for c in &report.checks {
        out.push_str(&record(report, c).to_string());
        out.push('\n');
    }
    out
}

fn verdict(status: Status) -> &'static str {
    match status {
        Status::Pass => "PASS",
        Status::Residual => "FAIL",
        Status::Precondition => "REJECTED",
        Status::Input => "ERROR",
    }
}

/// The human-readable report of one scenario.
pub fn human(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} (rellich {})", report.scenario, report.engine);
    for line in &report.echo {
        let _ = writeln!(out, "  {line}");
    }
    let _ = writeln!(out, "tolerance {:e}", report.tolerance);
    for c in &report.checks {
        out.push('\n');
        human_check(&mut out, c);
    }
    out
}

fn human_check(out: &mut String, c: &CheckRecord) {
    let time = c.wall_time.as_secs_f64();
    if let Some(msg) = &c.message {
        let _ = writeln!(out, "{:<24} {:<8} {msg}", c.id.name(), verdict(c.status));
        return;
    }
    match c.points {
        Some(p) => {
            let _ = writeln!(
                out,
                "{:<24} {:<8} max |lhs − rhs| = {:.3e} over {p} points [{time:.2} s]",
                c.id.name(),
                verdict(c.status),
                c.abs_residual
            );
            let _ = writeln!(out, "  worst point: lhs = {:.16e}, rhs = {:.16e}", c.lhs, c.rhs);
        }
        None => {
            let q = c.quadrature.map(|q| format!("q {}/{}", q.volume, q.boundary)).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:<24} {:<8} rel {:.3e}, abs {:.3e} ({q}) [{time:.2} s]",
                c.id.name(),
                verdict(c.status),
                c.rel_residual,
                c.abs_residual
            );
            for t in &c.terms {
                let _ = writeln!(out, "  {:<4} {:>24.16e}  {}", side(t.side), t.value, t.label);
            }
            let _ = writeln!(out, "  lhs = {:.16e}", c.lhs);
            let _ = writeln!(out, "  rhs = {:.16e}", c.rhs);
            for s in &c.sub_checks {
                let _ = writeln!(out, "  sub-check rel {:.3e}  {}", s.rel_residual, s.label);
            }
            if !c.convergence.is_empty() {
                let _ = writeln!(out, "  convergence:");
                for row in &c.convergence {
                    let _ = writeln!(out, "    q = {:>3}  abs {:.3e}  rel {:.3e}", row.order, row.abs_residual, row.rel_residual);
                }
            }
        }
    }
    for n in &c.notes {
        let _ = writeln!(out, "  note: {n}");
    }
}

/// One row of the suite table.
pub struct SuiteRow {
    pub file: String,
    pub status: Status,
    pub checks: usize,
    pub worst: Option<f64>,
    pub detail: String,
}

/// The aggregate suite table.
pub fn suite_table(rows: &[SuiteRow]) -> String {
    let width = rows.iter().map(|r| r.file.len()).max().unwrap_or(8).max(8);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:<8}  {:>6}  {:>10}  detail", "scenario", "result", "checks", "residual");
    for r in rows {
        let worst = r.worst.map_or_else(|| "-".to_string(), |w| format!("{w:.3e}"));
        let _ = writeln!(out, "{:<width$}  {:<8}  {:>6}  {:>10}  {}", r.file, verdict(r.status), r.checks, worst, r.detail);
    }
    let passed = rows.iter().filter(|r| r.status == Status::Pass).count();
    let _ = writeln!(out, "{passed}/{} scenarios passed", rows.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_have_seventeen_digits() {
        assert_eq!(num(0.1).to_string(), "1.0000000000000001e-1");
        assert_eq!(num(-2.0).to_string(), "-2.0000000000000000e+0");
        assert_eq!(num(f64::NAN), Value::Null);
    }
}
