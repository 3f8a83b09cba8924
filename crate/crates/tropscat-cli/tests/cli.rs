use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tropscat"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn sample(dir: &Path, name: &str, order: i64) -> PathBuf {
    let path = dir.join(format!("{name}.json"));
    let out = run(&["sample", name, "--order", &order.to_string(), "--output", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn two_lines_give_one_product_ray() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "two-lines", 3);
    let out = run(&["scatter", s(&input)]);
    assert!(out.status.success());
    let r = json(&out);
    assert_eq!(r["consistent"], true);
    let rays = r["added_rays"].as_array().unwrap();
    assert_eq!(rays.len(), 1);
    assert_eq!(rays[0]["m"], serde_json::json!([1, 1]));
    assert_eq!(rays[0]["h"], 2);
    assert_eq!(rays[0]["c"], "1");
    assert_eq!(rays[0]["dir"], serde_json::json!([-1, -1]));
}

#[test]
fn scatter_output_is_deterministic_and_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "two-lines", 2);
    let a = run(&["scatter", s(&input)]);
    let b = run(&["scatter", s(&input)]);
    assert_eq!(a.stdout, b.stdout);
    // the completed diagram is a fixed point
    let done = dir.path().join("done.json");
    std::fs::write(&done, serde_json::to_string(&json(&a)["diagram"]).unwrap()).unwrap();
    let again = json(&run(&["scatter", s(&done)]));
    assert!(again["added_rays"].as_array().unwrap().is_empty());
}

#[test]
fn svg_rendering() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "two-lines", 2);
    let out = run(&["scatter", s(&input), "--render", "svg"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("<svg"));
}

#[test]
fn counterexample_exits_with_a_witness() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "denominator", 1);
    let out = run(&["scatter", s(&input)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("R>=0(0,1)"), "{err}");
    assert!(err.contains("z^(0,-1,0;0)"), "{err}");
}

#[test]
fn legendre_is_an_involution() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "interval", 0);
    let once = dir.path().join("once.json");
    assert!(run(&["legendre", s(&input), "--output", s(&once)]).status.success());
    let twice = json(&run(&["legendre", s(&once)]));
    let original: Value = serde_json::from_str(&std::fs::read_to_string(&input).unwrap()).unwrap();
    assert_eq!(twice, original);
}

#[test]
fn normalize_local_plane() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "local-p2", 0);
    let r = json(&run(&["normalize", s(&input), "--order", "5", "--ring", "z"]));
    assert_eq!(r["coefficients"], serde_json::json!(["-2", "5", "-32", "286", "-3038"]));
}

#[test]
fn run_structure_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "focus-focus-pair", 0);
    let ck = dir.path().join("ck");
    let out = run(&["run-structure", s(&input), "--order", "2", "--ring", "z", "--jobs", "2", "--checkpoint-dir", s(&ck)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out);
    let orders = r["orders"].as_array().unwrap();
    assert_eq!(orders.len(), 3);
    assert!(orders.iter().all(|o| o["consistent"] == true && o["integral"] == true));
    assert_eq!(orders[2]["walls"], 1);

    let v = run(&["verify", s(&ck)]);
    assert!(v.status.success());
    assert_eq!(json(&v)["passed"], true);

    // rerunning resumes from the checkpoints and agrees
    let again = run(&["run-structure", s(&input), "--order", "2", "--ring", "z", "--checkpoint-dir", s(&ck)]);
    assert_eq!(json(&again)["last"], r["last"]);
}

#[test]
fn corrupted_checkpoint_fails_locally() {
    let dir = tempfile::tempdir().unwrap();
    let input = sample(dir.path(), "focus-focus-pair", 0);
    let ck = dir.path().join("ck");
    assert!(run(&["run-structure", s(&input), "--order", "2", "--checkpoint-dir", s(&ck)]).status.success());
    let last = ck.join("structure_order_2.json");
    let mut j: Value = serde_json::from_str(&std::fs::read_to_string(&last).unwrap()).unwrap();
    j["walls"][0]["c"] = Value::from("2");
    std::fs::write(&last, serde_json::to_string_pretty(&j).unwrap()).unwrap();

    let v = run(&["verify", s(&ck)]);
    assert_eq!(v.status.code(), Some(2));
    let r = json(&v);
    assert_eq!(r["passed"], false);
    let files = r["files"].as_array().unwrap();
    assert!(files[..2].iter().all(|f| f["consistent"] == true));
    assert_eq!(files[2]["consistent"], false);
    let failures = files[2]["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 1);
    assert!(failures[0].as_str().unwrap().starts_with("vertex 0"));
}

#[test]
fn malformed_input_reports_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"rank\": 3,\n  oops\n}").unwrap();
    let out = run(&["normalize", s(&bad), "--order", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3:"));
}

#[test]
fn unknown_sample_is_a_usage_error() {
    assert_eq!(run(&["sample", "nope"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert!(run(&["--help"]).status.success());
}
