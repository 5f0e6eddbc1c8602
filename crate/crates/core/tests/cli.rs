use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn conefix(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conefix"))
        .args(args)
        .current_dir(cwd)
        .env("CONEFIX_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn read_report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn list_names_every_builtin() {
    let tmp = tempfile::tempdir().unwrap();
    let out = conefix(&["list"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for (name, _) in conefix::cli::BUILTINS {
        assert!(text.contains(name), "{name} missing from list");
    }
}

#[test]
fn run_writes_report_residuals_and_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = conefix(&["run", "linf-theorem1", "--out", out_dir.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let report = read_report(&out_dir);
    assert_eq!(report["status"], "passed");
    assert_eq!(report["config"]["name"], "linf-theorem1");
    assert!(report["checklist"].as_array().unwrap().iter().all(|c| c["status"] == "PASS"));

    let residuals = std::fs::read_to_string(out_dir.join("residuals.csv")).unwrap();
    assert!(residuals.starts_with("n,residual,certified_bound\n"));
    let solution = std::fs::read_to_string(out_dir.join("solution.csv")).unwrap();
    let values: Vec<f64> = solution.lines().filter(|l| !l.starts_with('#')).map(|l| l.parse().unwrap()).collect();
    assert_eq!(values.len(), 64);
    assert!(values.iter().all(|v| (v - 1.0).abs() <= 1e-12));
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for threads in ["0", "3"] {
        let dir = tmp.path().join(threads);
        let out = Command::new(env!("CARGO_BIN_EXE_conefix"))
            .args(["run", "periodic-gcd2", "--out", dir.to_str().unwrap()])
            .env("CONEFIX_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        reports.push(std::fs::read_to_string(dir.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn config_file_round_trip_and_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = conefix::cli::builtin("sum-perturbation").unwrap();
    cfg.output.dir = Some(tmp.path().join("from-config"));
    let path = tmp.path().join("sum.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let out = conefix(&["validate", path.to_str().unwrap()], tmp.path());
    assert!(out.status.success());
    let out = conefix(&["run", path.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let solution = std::fs::read_to_string(tmp.path().join("from-config/solution.csv")).unwrap();
    let x: f64 = solution.lines().find(|l| !l.starts_with('#')).unwrap().parse().unwrap();
    // Positive root of sqrt(x) + 1/2 = x.
    let expected = ((1.0 + 3f64.sqrt()) / 2.0).powi(2);
    assert!((x - expected).abs() <= 1e-9, "{x}");
}

#[test]
fn bad_sigma0_exits_with_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = serde_json::to_value(conefix::cli::builtin("linf-theorem1").unwrap()).unwrap();
    v["driver"]["sigma0"] = serde_json::json!(1.5);
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, v.to_string()).unwrap();
    for cmd in ["validate", "run"] {
        let out = conefix(&[cmd, path.to_str().unwrap()], tmp.path());
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).contains("sigma0 must lie in (0,1)"));
    }
}

#[test]
fn unknown_config_keys_and_names_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("typo.json");
    let mut v = serde_json::to_value(conefix::cli::builtin("linf-theorem1").unwrap()).unwrap();
    v["tolerances"]["toll"] = serde_json::json!(1e-9);
    std::fs::write(&path, v.to_string()).unwrap();
    assert_eq!(conefix(&["validate", path.to_str().unwrap()], tmp.path()).status.code(), Some(1));
    assert_eq!(conefix(&["run", "no-such-experiment"], tmp.path()).status.code(), Some(1));
}

#[test]
fn failed_hypothesis_exits_with_certification_code() {
    // sigma0 = 0.9 is not a lower ratio for A v0 = 1 against v0 = 2.
    let tmp = tempfile::tempdir().unwrap();
    let mut v = serde_json::to_value(conefix::cli::builtin("linf-theorem1").unwrap()).unwrap();
    v["driver"]["sigma0"] = serde_json::json!(0.9);
    let path = tmp.path().join("uncertified.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let out = conefix(&["run", path.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn iteration_budget_exhaustion_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = serde_json::to_value(conefix::cli::builtin("scalar-rate").unwrap()).unwrap();
    v["tolerances"]["max_iter"] = serde_json::json!(3);
    let path = tmp.path().join("short.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let out = conefix(&["run", path.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn counterexample_runs_report_multiple_limits() {
    let tmp = tempfile::tempdir().unwrap();
    let out = conefix(&["run", "counterexample-tilde", "--out", "ct"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_report(&tmp.path().join("ct"));
    assert_eq!(report["results"]["probe"]["unique"], false);
    assert!(report["results"]["probe"]["distinct_count"].as_u64().unwrap() >= 2);
}

#[test]
fn builtin_resolves_from_cfg_name() {
    let tmp = tempfile::tempdir().unwrap();
    let out = conefix(&["run", "linf-theorem1.cfg", "--out", "l"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_report(&tmp.path().join("l"));
    assert_eq!(report["convergence"]["bracket_ok"], true);
}

#[test]
fn urysohn_report_carries_tau_star_and_budgets() {
    let tmp = tempfile::tempdir().unwrap();
    let out = conefix(&["run", "urysohn.cfg", "--out", "u"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_report(&tmp.path().join("u"));
    let tau = report["certificate"]["tau_star"].as_f64().unwrap();
    assert!((tau - 0.25).abs() <= 1e-12, "{tau}");
    assert!(report["budgets"]["rule"]["budget"].as_f64().unwrap() < 1e-6);
    let solution = std::fs::read_to_string(tmp.path().join("u/solution.csv")).unwrap();
    for v in solution.lines().filter(|l| !l.starts_with('#')).map(|l| l.parse::<f64>().unwrap()) {
        assert!((0.25 - 1e-10..=1.0 + 1e-10).contains(&v), "{v}");
    }
}
