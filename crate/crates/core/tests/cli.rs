use std::process::{Command, Output};

use serde_json::Value;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sticky-sim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn point_mass_prints_five_digits() {
    let o = sim(&["closed-form", "--quantity", "point-mass", "--t", "1", "--alpha", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "0.33620");
}

#[test]
fn unknown_flag_is_a_config_error() {
    assert_eq!(sim(&["simulate", "--colour", "red"]).status.code(), Some(2));
    assert_eq!(sim(&["simulate", "--dt", "-1"]).status.code(), Some(2));
}

#[test]
fn feller_output_feeds_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    let o = sim(&["feller", "--u", "[x, 0: 3*x]", "--v", "[x, 0: x + 4/3]", "--out", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&spec).unwrap();
    assert!(text.contains("sticky = 0, 0.25, 0.75, 1"), "{text}");

    let csv = dir.path().join("path.csv");
    let o = sim(&["simulate", "--spec", spec.to_str().unwrap(), "--T", "0.01", "--dt", "1e-4", "--out", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x,L0,occ0,at_point"));
    assert_eq!(lines.count(), 101);
}

#[test]
fn same_seed_same_path() {
    let args = ["simulate", "--T", "0.05", "--dt", "1e-3", "--seed", "11", "--path-index", "3"];
    assert_eq!(stdout(&sim(&args)), stdout(&sim(&args)));
    let mut other = args.to_vec();
    other[6] = "12";
    assert_ne!(stdout(&sim(&args)), stdout(&sim(&other)));
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# sticky run\nalpha = 2\nT = 0.25\n").unwrap();
    let c = cfg.to_str().unwrap();
    let o = sim(&["closed-form", "--config", c, "--quantity", "point-mass"]);
    let from_file: f64 = stdout(&o).trim().parse().unwrap();
    let direct: f64 = stdout(&sim(&["closed-form", "--quantity", "point-mass", "--alpha", "2", "--T", "0.25"])).trim().parse().unwrap();
    assert_eq!(from_file, direct);
    let o = sim(&["closed-form", "--config", c, "--alpha", "1", "--quantity", "point-mass"]);
    let overridden: f64 = stdout(&o).trim().parse().unwrap();
    let expect: f64 = stdout(&sim(&["closed-form", "--quantity", "point-mass", "--alpha", "1", "--T", "0.25"])).trim().parse().unwrap();
    assert_eq!(overridden, expect);

    std::fs::write(&cfg, "alpha 2\n").unwrap();
    assert_eq!(sim(&["closed-form", "--config", c, "--quantity", "point-mass"]).status.code(), Some(2));
}

#[test]
fn ensemble_json_has_expected_keys() {
    let o = sim(&["simulate", "--mode", "ensemble", "--paths", "400", "--dt", "1e-3", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["config", "seed", "n_paths", "quantiles", "mean", "ci95", "ks_reports"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["quantiles"]["occupation0"].as_array().unwrap().len(), 101);
    assert_eq!(v["ks_reports"][0]["reference"], "sticky_occupation_law");
}

#[test]
fn failing_verification_exits_one() {
    let o = sim(&["verify", "pointmass", "--paths", "500", "--dt", "1e-3", "--tol", "1e-9"]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["report"]["pass"], false);
}

#[test]
fn closed_forms_refuse_other_processes() {
    let o = sim(&["verify", "pointmass", "--paths", "10", "--drift", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_two_samples() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "0.1\n0.2\n0.3\n0.4\n").unwrap();
    std::fs::write(&b, "t,x\n0,0.1\n0,0.2\n0,0.3\n0,0.4\n").unwrap();
    let o = sim(&["analyze", "--input", a.to_str().unwrap(), "--input2", b.to_str().unwrap(), "--reference", "uniform"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ks_reports"].as_array().unwrap().len(), 2);
    assert!((v["ks_reports"][0]["ks"].as_f64().unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn oracle_path_csv() {
    let o = sim(&["oracle", "--mode", "path", "--delta", "0.1", "--T", "0.5", "--alpha", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.starts_with("t,x\n"));
    assert!(s.lines().count() > 2);
}
