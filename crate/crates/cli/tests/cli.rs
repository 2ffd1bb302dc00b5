use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn crtpower(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crtpower")).args(args).output().unwrap()
}

fn json_stdout(args: &[&str]) -> Value {
    let out = crtpower(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn power_of_the_study_scenario() {
    let v = json_stdout(&["power", "--scenario", s(&scenario("two_endpoint_iu.json")), "--out", "-"]);
    let p = v["result"]["power"].as_f64().unwrap();
    assert!((p - 0.841).abs() < 0.002, "{p}");
    // The resolved scenario is echoed.
    assert_eq!(v["scenario"]["design"]["n"], 16);
}

#[test]
fn sample_sizes_for_both_tests() {
    let kdpp = scenario("kdpp.json");
    for (test, want) in [("omnibus", 48), ("iu", 50)] {
        let v = json_stdout(&["samplesize", "--scenario", s(&kdpp), "--test", test, "--out", "-"]);
        assert_eq!(v["solution"]["value"], want, "{test}");
    }
}

#[test]
fn solved_design_meets_target_when_fed_back() {
    let dir = TempDir::new().unwrap();
    let kdpp = scenario("kdpp.json");
    let v = json_stdout(&["samplesize", "--scenario", s(&kdpp), "--test", "omnibus", "--out", "-"]);
    let mut sc = v["scenario"].clone();
    sc["design"]["n"] = v["solution"]["value"].clone();
    let path = write(&dir, "solved.json", &sc.to_string());
    let back = json_stdout(&["power", "--scenario", s(&path), "--out", "-"]);
    assert!(back["result"]["power"].as_f64().unwrap() >= 0.8);
}

#[test]
fn cluster_size_solve_is_minimal() {
    let kdpp = scenario("kdpp.json");
    let v = json_stdout(&["samplesize", "--scenario", s(&kdpp), "--test", "omnibus", "--solve", "m", "--out", "-"]);
    let m = v["solution"]["value"].as_u64().unwrap();
    assert!(v["solution"]["power"]["power"].as_f64().unwrap() >= 0.8);
    assert!(v["solution"]["power_below"].as_f64().unwrap() < 0.8, "m = {m}");
}

#[test]
fn zero_effect_gives_the_level() {
    let dir = TempDir::new().unwrap();
    let path = write(
        &dir,
        "null.json",
        r#"{"model": {"rho0": 0.05, "rho1": 0.02, "rho2": 0.3, "sigma_y2": [1, 1]},
            "effect": {"beta": [0, 0]},
            "design": {"n": 20, "m_bar": 30},
            "test": {"kind": "omnibus"}}"#,
    );
    let v = json_stdout(&["power", "--scenario", s(&path), "--out", "-"]);
    assert_eq!(v["result"]["power"].as_f64().unwrap(), 0.05);
}

#[test]
fn single_point_contour_matches_power() {
    let sc = scenario("two_endpoint_iu.json");
    let out = crtpower(&["contour", "--scenario", s(&sc), "--axis", "rho2=0.2", "--out", "-"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let grid_power: f64 = row[1].parse().unwrap();
    let v = json_stdout(&["power", "--scenario", s(&sc), "--out", "-"]);
    assert!((grid_power - v["result"]["power"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn contour_flags_impossible_cells() {
    let sc = scenario("two_endpoint_iu.json");
    let out = crtpower(&["contour", "--scenario", s(&sc), "--axis", "rho2=0.2,0.99,1.5", "--out", "-"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let flags: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(flags[0], "true");
    assert_eq!(flags[2], "false");
}

#[test]
fn simulation_is_reproducible() {
    let sc = scenario("two_endpoint_iu.json");
    let args = ["simulate", "--scenario", s(&sc), "--reps", "20", "--seed", "7", "--out", "-"];
    let a = json_stdout(&args);
    let b = json_stdout(&args);
    assert_eq!(a["report"], b["report"]);
    assert_eq!(a["report"]["replicates"], 20);
}

#[test]
fn zero_replicates_is_a_validation_error() {
    let sc = scenario("two_endpoint_iu.json");
    let out = crtpower(&["simulate", "--scenario", s(&sc), "--reps", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generated_data_can_be_fitted() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("trial.csv");
    let sc = scenario("two_endpoint_iu.json");
    let out = crtpower(&["generate", "--scenario", s(&sc), "--seed", "3", "--out", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = dir.path().join("fit.json");
    let out = crtpower(&["fit", "--data", s(&csv), "--test", "iu", "--out", s(&fit)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    assert_eq!(v["fit"]["k"], 2);
    assert_eq!(v["fit"]["n_clusters"], 16);
    assert_eq!(v["fit"]["converged"], true);
    assert!(v["decision"]["reject"].is_boolean());
}

#[test]
fn malformed_data_is_rejected() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "bad.csv", "cluster_id,arm,y1\n1,0,0.5\n2,1,oops\n");
    let out = crtpower(&["fit", "--data", s(&csv)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_icc_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let path = write(
        &dir,
        "bad.json",
        r#"{"model": {"rho0": 1.2, "rho1": 0.0, "rho2": 0.3, "sigma_y2": [1, 1]},
            "effect": {"beta": [0.3, 0.3]}, "design": {"n": 20, "m_bar": 30}}"#,
    );
    assert_eq!(crtpower(&["power", "--scenario", s(&path)]).status.code(), Some(2));
}

#[test]
fn unreachable_target_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let path = write(
        &dir,
        "tight.json",
        r#"{"model": {"rho0": [0.01, 0.1], "rho1": 0.005, "rho2": 0.2, "sigma_y2": [1, 2]},
            "effect": {"beta": [0.3, 0.7]},
            "design": {"m_bar": 60},
            "test": {"kind": "iu"},
            "solver": {"ceiling": 12}}"#,
    );
    let out = crtpower(&["samplesize", "--scenario", s(&path)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
