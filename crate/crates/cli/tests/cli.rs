use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_netcournot"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn gen(dir: &TempDir, name: &str, args: &[&str]) -> PathBuf {
    let path = dir.path().join(name);
    let mut full = vec!["gen"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", path.to_str().unwrap()]);
    let out = run(&full);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

const DUOPOLY: &str = r#"{
  "firms": [{"cost": {"kind": "linear", "c": 0}}, {"cost": {"kind": "linear", "c": 0.3}}],
  "markets": [{"alpha": 1, "beta": 1}],
  "edges": "complete"
}"#;

const QUADRATIC: &str = r#"{
  "firms": [{"cost": {"kind": "quadratic", "c": 0, "d": 1}}],
  "markets": [{"alpha": 2, "beta": 1}],
  "edges": "complete"
}"#;

#[test]
fn nash_monopoly_welfare() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "demo.json", &["--family", "symmetric", "--n", "1", "--c", "0"]);
    let r = stdout_json(&run(&["nash", p(&inst)]));
    assert_eq!(r["command"], "nash");
    assert_eq!(r["instance_digest"].as_str().unwrap().len(), 64);
    assert!((f(&r["result"]["sw"]) - 1.5).abs() < 1e-12);
}

#[test]
fn nash_closed_rejects_quadratic() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "q.json", QUADRATIC);
    let out = run(&["nash", p(&inst), "--method", "closed"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("closed form requires linear costs"));
    let r = stdout_json(&run(&["nash", p(&inst), "--method", "iterative"]));
    assert!((f(&r["result"]["q"][0][0]) - 0.5).abs() < 1e-9);
}

#[test]
fn nash_csv_rows() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "d.json", DUOPOLY);
    let out = run(&["nash", p(&inst), "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "firm,market,quantity");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], "1,1,0.433333333333");
}

#[test]
fn non_convergence_exit_code() {
    let dir = TempDir::new().unwrap();
    let inst = gen(
        &dir,
        "r.json",
        &["--family", "random", "--seed", "1", "--n", "6", "--m", "4", "--costs", "mixed"],
    );
    let out = run(&["nash", p(&inst), "--method", "iterative", "--tol", "1e-300"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stdout.is_empty());
}

#[test]
fn bad_input_exit_code() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", r#"{"firms": [], "markets": [{"alpha": 1, "beta": -1}], "edges": "complete"}"#);
    assert_eq!(run(&["nash", p(&bad)]).status.code(), Some(1));
    assert_eq!(run(&["nash", "/nonexistent/x.json"]).status.code(), Some(1));
}

#[test]
fn efficient_duopoly() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "d.json", DUOPOLY);
    let r = stdout_json(&run(&["efficient", p(&inst)]));
    assert!((f(&r["result"]["sw"]) - 0.5).abs() < 1e-12);
}

#[test]
fn poa_designs() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "aw.json", &["--family", "asym-worst", "--n", "2", "--alpha", "1", "--beta", "1", "--c1", "0"]);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&inst).unwrap()).unwrap();
    assert!((f(&doc["firms"][1]["cost"]["c"]) - 4.0 / 11.0).abs() < 1e-15);
    assert!((f(&doc["metadata"]["derived"]["c_star"]) - 4.0 / 11.0).abs() < 1e-11);

    let r = stdout_json(&run(&["poa", p(&inst), "--design", "open"]));
    assert_eq!(f(&r["result"]["rho"]), 1.375);
    assert_eq!(f(&r["result"]["bound_value"]), 1.375);
    assert_eq!(r["result"]["bound_satisfied"], true);

    let r = stdout_json(&run(&["poa", p(&inst), "--design", "greedy"]));
    assert!(f(&r["result"]["rho"]) <= 4.0 / 3.0 + 1e-9);
    assert_eq!(r["result"]["edges"], serde_json::json!([[1, 1]]));

    assert_eq!(run(&["poa", p(&inst), "--design", "controlled"]).status.code(), Some(1));
    assert_eq!(run(&["poa", p(&inst), "--lambda", "0.5"]).status.code(), Some(1));
}

#[test]
fn poa_controlled_unbounded() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "cs.json", &["--family", "cs-example", "--c", "1", "--epsilon", "0.1"]);
    let r = stdout_json(&run(&[
        "poa", p(&inst), "--design", "controlled", "--lambda", "1", "--grid", "2000",
    ]));
    assert_eq!(r["result"]["rho"], "inf");
    let out = run(&["poa", p(&inst), "--design", "controlled", "--lambda", "1", "--grid", "500", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().split(',').nth(2) == Some("inf"));
}

#[test]
fn gen_families() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "t.json", &["--family", "theta", "--m", "3", "--theta", "0.5"]);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&inst).unwrap()).unwrap();
    let mk = &doc["markets"];
    assert_eq!(mk.as_array().unwrap().len(), 3);
    assert!((f(&mk[2]["alpha"]) - 1.0 / 6.0).abs() < 1e-15);
    assert!((f(&mk[2]["beta"]) - 1.0 / 12.0).abs() < 1e-15);
    assert_eq!(doc["metadata"]["family"], "theta");

    let out = run(&["gen", "--family", "theta", "--m", "2", "--theta", "0.7"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta"));

    let inst = gen(&dir, "g.json", &["--family", "generalcap", "--m", "3", "--lambda", "0.25"]);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&inst).unwrap()).unwrap();
    let a = f(&doc["metadata"]["derived"]["a"]);
    assert!(a > 0.0 && a < 1.0);

    let inst = gen(&dir, "r.json", &["--family", "rev-example", "--alpha", "4", "--beta", "1"]);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&inst).unwrap()).unwrap();
    assert!((f(&doc["metadata"]["derived"]["epsilon_limit"]) - 1.0 / 49.0).abs() < 1e-12);
}

#[test]
fn gen_random_is_deterministic() {
    let a = run(&["gen", "--family", "random", "--seed", "42"]);
    let b = run(&["gen", "--family", "random", "--seed", "42"]);
    let c = run(&["gen", "--family", "random", "--seed", "43"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn generated_documents_round_trip() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "r.json", &["--family", "random", "--seed", "5", "--costs", "mixed"]);
    let first = stdout_json(&run(&["nash", p(&inst)]));
    let second = stdout_json(&run(&["nash", p(&inst)]));
    assert_eq!(first, second);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&inst).unwrap()).unwrap();
    assert_eq!(doc["metadata"]["instance_digest"], first["instance_digest"]);
}

#[test]
fn bounds_tables() {
    let out = run(&["bounds", "--table", "open", "--n", "1..5", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let col: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let expect = [4.0 / 3.0, 11.0 / 8.0, 7.0 / 5.0, 17.0 / 12.0, 10.0 / 7.0];
    assert_eq!(col.len(), 5);
    for (a, b) in col.iter().zip(expect) {
        assert!((a - b).abs() < 1e-11);
    }

    let r = stdout_json(&run(&["bounds", "--table", "controlled", "--lambda", "0.5", "--m", "2..6"]));
    for row in r["result"]["rows"].as_array().unwrap() {
        let m = f(&row["m"]);
        assert!((f(&row["bound"]) - 8.0 * m / 9.0).abs() < 1e-11);
    }

    let r = stdout_json(&run(&["bounds", "--table", "search", "--n", "2", "--theta", "0:1:0.5"]));
    let rows = r["result"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!((f(&rows[2]["bound"]) - 1.35).abs() < 1e-12);

    let r = stdout_json(&run(&["bounds", "--table", "controlled", "--lambda", "0.8", "--m", "2"]));
    assert_eq!(r["result"]["rows"][0]["bound"], "inf");

    assert_eq!(run(&["bounds", "--table", "open", "--n", "5..1"]).status.code(), Some(1));
    assert_eq!(run(&["bounds", "--table", "search", "--theta", "0:1:-1"]).status.code(), Some(1));
}

#[test]
fn design_command() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "d.json", DUOPOLY);
    let r = stdout_json(&run(&["design", p(&inst)]));
    assert_eq!(r["result"]["edges"], serde_json::json!([[1, 1]]));

    let inst = gen(&dir, "r.json", &["--family", "random", "--seed", "9", "--n", "3", "--m", "2"]);
    let r = stdout_json(&run(&["design", p(&inst), "--oracle"]));
    assert_eq!(r["result"]["oracle_equal"], true);

    let quad = write(&dir, "q.json", QUADRATIC);
    assert_eq!(run(&["design", p(&quad)]).status.code(), Some(1));
}

#[test]
fn controlled_command() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "t.json", &["--family", "theta", "--m", "2", "--theta", "0.5"]);
    let r = stdout_json(&run(&["controlled", p(&inst), "--lambda", "0.5"]));
    let eq = r["result"]["equilibria"].as_array().unwrap();
    assert_eq!(eq.len(), 2);
    assert!((f(&eq[0]["total_q"]) - 0.5).abs() < 1e-9);
    assert_eq!(eq[0]["kind"], "exact");
}

#[test]
fn curve_command() {
    let dir = TempDir::new().unwrap();
    let inst = gen(&dir, "t.json", &["--family", "theta", "--m", "2", "--theta", "0.5"]);
    let r = stdout_json(&run(&["curve", p(&inst), "--lambda", "0.5", "--grid", "11"]));
    let bps: Vec<f64> = r["result"]["breakpoints"].as_array().unwrap().iter().map(f).collect();
    assert_eq!(bps.len(), 3);
    for (a, b) in bps.iter().zip([0.0, 2.0 / 3.0, 2.0]) {
        assert!((a - b).abs() < 1e-11);
    }

    let single = gen(&dir, "s.json", &["--family", "symmetric", "--n", "2", "--alpha", "3", "--beta", "2"]);
    let r = stdout_json(&run(&["curve", p(&single), "--lambda", "0.3"]));
    let bps = r["result"]["breakpoints"].as_array().unwrap();
    assert_eq!(bps.len(), 2);
    assert!((f(&bps[1]) - 1.5).abs() < 1e-12);

    let two = write(
        &dir,
        "two.json",
        r#"{"firms": [{"cost": {"kind": "linear", "c": 0}}],
            "markets": [{"alpha": 2, "beta": 1}, {"alpha": 1, "beta": 3}],
            "edges": "complete"}"#,
    );
    let r = stdout_json(&run(&["curve", p(&two), "--lambda", "0.9"]));
    assert_eq!(r["result"]["segments"].as_array().unwrap().len(), 2);

    let out = run(&["curve", p(&two), "--lambda", "0.9", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "q,price,active_markets,kind");

    assert_eq!(run(&["curve", p(&two), "--lambda", "1.5"]).status.code(), Some(1));
}
