use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rellich(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rellich")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const PASSING: &str = "\
[scenario]
id = LAPLACE_RELLICH_N13
tolerance = 1e-10
[metric]
preset = euclidean
n = 3
[domain]
preset = unit_box
[h]
preset = dilation
[u]
expr = x1^3 + x2*x3
[v]
expr = x1*x2^2
";

const SHEAR: &str = "\
[scenario]
id = POLY_N30
[metric]
preset = euclidean
n = 2
[domain]
preset = unit_box
[h]
components = x2, 0
[u]
expr = x1^4
[v]
expr = x2^4
";

// Literal coefficients are wrong once μ varies.
const RESIDUAL: &str = "\
[scenario]
id = BIHARMONIC_SINGLE_N39
coefficients = literal
tolerance = 1e-6
[metric]
preset = sphere_stereographic
n = 3
[domain]
preset = cap
r = 1
[h]
preset = sphere_conformal
k = 1
[u]
expr = (1 - x1^2 - x2^2 - x3^2)^2 * (1 + x1)
";

#[test]
fn passing_scenario_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "ok.scn", PASSING);
    let out = rellich(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("LAPLACE_RELLICH_N13"));
}

#[test]
fn residual_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "literal.scn", RESIDUAL);
    let out = rellich(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1, "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn shear_field_is_rejected_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "shear.scn", SHEAR);
    let out = rellich(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stdout(&out));
    assert!(stdout(&out).contains("Killing deviation"), "{}", stdout(&out));
}

#[test]
fn unknown_id_is_a_parse_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "bad.scn", &PASSING.replace("LAPLACE_RELLICH_N13", "RELLICH_N99"));
    let out = rellich(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("bad.scn:2:6: unknown identity id `RELLICH_N99`"), "{}", stderr(&out));
}

#[test]
fn usage_and_io_errors_exit_three() {
    assert_eq!(code(&rellich(&["run", "/nonexistent/x.scn"])), 3);
    assert_eq!(code(&rellich(&["frobnicate"])), 3);
    assert_eq!(code(&rellich(&["explain", "NOPE"])), 3);
    assert_eq!(code(&rellich(&["--help"])), 0);
}

#[test]
fn machine_records_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "ok.scn", PASSING);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = rellich(&["run", path.to_str().unwrap(), "--format", "machine", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let record: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["id", "lhs", "rhs", "abs_residual", "rel_residual", "terms", "quadrature", "pass"] {
        assert!(record.get(key).is_some(), "missing `{key}` in {record}");
    }
    assert_eq!(record["id"], "LAPLACE_RELLICH_N13");
    assert_eq!(record["pass"], true);
    assert_eq!(record["quadrature"]["volume"], 16);
    // 17 significant digits: one before the point and sixteen after.
    let lhs = text.split("\"lhs\":").nth(1).unwrap().split(',').next().unwrap();
    let mantissa = lhs.trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.len(), 18, "{lhs}");
}

#[test]
fn bundled_suite_passes() {
    let out = rellich(&["suite", bundled().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("scenarios passed"));
}

#[test]
fn suite_isolates_failures() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a_ok.scn", PASSING);
    write(dir.path(), "b_literal.scn", RESIDUAL);
    write(dir.path(), "c_ok.scn", PASSING);
    write(dir.path(), "notes.txt", "ignored");
    let out = rellich(&["suite", dir.path().to_str().unwrap()]);
    assert_ne!(code(&out), 0);
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).take(3).collect();
    assert!(rows[0].starts_with("a_ok.scn") && rows[0].contains("PASS"), "{text}");
    assert!(rows[1].starts_with("b_literal.scn") && rows[1].contains("FAIL"), "{text}");
    assert!(rows[2].starts_with("c_ok.scn") && rows[2].contains("PASS"), "{text}");
    assert!(text.contains("2/3 scenarios passed"));
}

#[test]
fn empty_suite_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rellich(&["suite", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("no .scn files"));
}

#[test]
fn explain_names_every_term() {
    for (id, needles) in [
        ("LAPLACE_RELLICH_N13", &["LHS:", "RHS:", "conformal Killing"][..]),
        ("POLY_N30", &["LHS:", "RHS:", "homothety", "Δ^{2m}"][..]),
        ("NAVIER_W7", &["n∫G(u,v)", "(n−4)∫(a u G_u + (1−a) v G_v)", "sub-checks:"][..]),
    ] {
        let out = rellich(&["explain", id]);
        assert_eq!(code(&out), 0);
        let text = stdout(&out);
        for needle in needles {
            assert!(text.contains(needle), "{id}: missing `{needle}` in\n{text}");
        }
        assert_eq!(text, stdout(&rellich(&["explain", id])));
    }
}

#[test]
fn presets_listing_is_stable() {
    let a = rellich(&["presets"]);
    assert_eq!(code(&a), 0);
    let text = stdout(&a);
    assert!(text.lines().any(|l| l.starts_with("dilation") && l.contains("homothety, μ=2")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("special_conformal") && l.contains("conformal, μ non-constant")));
    assert_eq!(a.stdout, rellich(&["presets"]).stdout);
}
