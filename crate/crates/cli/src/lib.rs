//! Scenario runner for the `rellich` identity checker.
//!
//! Exit codes: 0 when every check passes, 1 for a residual above the
//! declared tolerance, 2 when an identity rejects its inputs (for example a
//! field that is not conformal Killing), 3 for unreadable or invalid input.

pub mod explain;
pub mod report;
pub mod run;
pub mod scenario;

use std::path::{Path, PathBuf};

use report::SuiteRow;
use run::{run_scenario, RunReport, Status};
use scenario::{parse_scenario, ScenarioError};

/// File extension of scenario files.
pub const EXTENSION: &str = "scn";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{}:{}: {}", .source.line, .source.column, .source.message)]
    Scenario { path: String, source: ScenarioError },
    #[error("{0}: no .scn files")]
    EmptySuite(String),
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into())
}

/// Read, parse and run one scenario file.
pub fn run_file(path: &Path) -> Result<RunReport, CliError> {
    let display = path.display().to_string();
    let src = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: display.clone(), source })?;
    let scenario = parse_scenario(&src, &stem(path)).map_err(|source| CliError::Scenario { path: display, source })?;
    Ok(run_scenario(&scenario))
}

/// Scenario files of `dir` in sorted order.
pub fn suite_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let display = dir.display().to_string();
    let entries = std::fs::read_dir(dir).map_err(|source| CliError::Io { path: display.clone(), source })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|source| CliError::Io { path: display.clone(), source })?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::EmptySuite(display));
    }
    Ok(files)
}

/// Results of a suite: one table row per file and the reports that ran.
pub struct SuiteOutcome {
    pub rows: Vec<SuiteRow>,
    pub reports: Vec<RunReport>,
}

impl SuiteOutcome {
    pub fn exit_code(&self) -> u8 {
        self.rows.iter().map(|r| r.status).max().unwrap_or(Status::Pass).exit_code()
    }
}

/// Run every scenario of `dir`. A failing file does not stop the suite.
pub fn run_suite(dir: &Path) -> Result<SuiteOutcome, CliError> {
    let files = suite_files(dir)?;
    let mut rows = Vec::with_capacity(files.len());
    let mut reports = Vec::new();
    for path in files {
        let file = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match run_file(&path) {
            Ok(report) => {
                let failing: Vec<String> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed())
                    .map(|c| match &c.message {
                        Some(m) => m.clone(),
                        None => format!("{} above tolerance", c.id),
                    })
                    .collect();
                let ids: Vec<&str> = report.checks.iter().map(|c| c.id.name()).collect();
                rows.push(SuiteRow {
                    file,
                    status: report.status(),
                    checks: report.checks.len(),
                    worst: report.worst_residual(),
                    detail: if failing.is_empty() { ids.join(", ") } else { failing.join("; ") },
                });
                reports.push(report);
            }
            Err(e) => rows.push(SuiteRow { file, status: Status::Input, checks: 0, worst: None, detail: e.to_string() }),
        }
    }
    Ok(SuiteOutcome { rows, reports })
}
