//! End-to-end runs of the `lbmh` binary at smoke scale.

use std::path::Path;
use std::process::{Command, Output};

fn lbmh(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbmh"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("LBMH_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = lbmh(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn design_reports_hyperbolic_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        &["design", "--target", "hyperbolic:0.1", "--presets", "mala,barker,barker-rademacher", "--seed", "1"],
        dir.path(),
    );
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let r1 = v["ratios"]["mala/barker"].as_f64().unwrap();
    let r2 = v["ratios"]["barker-rademacher/mala"].as_f64().unwrap();
    assert!((r1 - 1.18).abs() < 0.005, "{r1}");
    assert!((r2 - 2.08).abs() < 0.01, "{r2}");
    let file: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("design.json")).unwrap()).unwrap();
    assert_eq!(file, v);
}

#[test]
fn design_marks_degenerate_designs() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["design", "--presets", "mala,three-point(2)", "--seed", "1"], dir.path());
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(v["designs"][1]["summary"].is_null());
}

#[test]
fn esjd_scan_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(
        &["esjd-scan", "--seed", "3", "--presets", "mala,three-point(2,0)", "--n-grid", "8,16,32", "--samples", "500", "--golden-iters", "8"],
        dir.path(),
    );
    assert!(s.starts_with("esjd-scan: 6 rows"), "{s}");
    let csv = std::fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "n,preset,sigma_opt,esjd,acc,esjd_n13");
    assert!(csv.contains("\"three-point(2,0)\""));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn clt_check_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["clt-check", "--seed", "3", "--n-grid", "16,64", "--samples", "500", "--ell", "0.8"], dir.path());
    assert_eq!(header(&dir.path().join("clt.csv")), "n,ell,emp_mean,emp_var,pred_mean,pred_var,ks");
}

#[test]
fn poisson_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(&["poisson", "--seed", "3", "--reps", "2", "--iters", "1000", "--presets", "barker,barker-bimodal(0.1)"], dir.path());
    assert!(s.starts_with("poisson: 8 chains"), "{s}");
    assert_eq!(header(&dir.path().join("poisson.csv")), "scenario,rep,preset,median_ess,min_ess,acc");
}

#[test]
fn correlated_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["correlated", "--seed", "3", "--target", "equicorrelated:0.9", "--n-grid", "16", "--samples", "500", "--golden-iters", "8"],
        dir.path(),
    );
    assert_eq!(header(&dir.path().join("correlated.csv")), "n,preset,sigma_opt,esjd,acc,esjd_n13");
}

#[test]
fn mu4_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["mu4-sweep", "--seed", "3", "--mu4", "1.5,3", "--n-grid", "8,16", "--samples", "500", "--golden-iters", "8"],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("mu4_sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "n,mu4,esjd,acc");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn chain_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["chain", "--seed", "3", "--target", "poisson:1", "--presets", "barker", "--iters", "1000", "--adapt"], dir.path());
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "iter,coord_0,coord_1,coord_2,accepted,rho");
    assert_eq!(trace.lines().count(), 1001);
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lbmh(&["design"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_input_exits_2_and_numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lbmh(&["design", "--seed", "1", "--presets", "hmc"], dir.path()).status.code(), Some(2));
    assert_eq!(lbmh(&["design", "--seed", "1", "--target", "ar1"], dir.path()).status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let o = lbmh(&["design", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    // θ² = 0 has no CLT limit to compare against
    let o = lbmh(&["clt-check", "--seed", "1", "--presets", "three-point(2)", "--n-grid", "8", "--samples", "10"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"seed": 5, "presets": "mala", "target": "hyperbolic:0.1"}"#).unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["design", "--config", cfg.to_str().unwrap()], dir.path())).unwrap();
    assert_eq!(v["designs"].as_array().unwrap().len(), 1);
    assert_eq!(v["target"], "hyperbolic:0.1");
    let v: serde_json::Value = serde_json::from_str(&ok(
        &["design", "--config", cfg.to_str().unwrap(), "--presets", "mala,barker"],
        dir.path(),
    ))
    .unwrap();
    assert_eq!(v["designs"].as_array().unwrap().len(), 2);
}

#[test]
fn env_var_overrides_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let flag_out = dir.path().join("from_flag");
    let o = Command::new(env!("CARGO_BIN_EXE_lbmh"))
        .args(["design", "--seed", "1", "--out"])
        .arg(&flag_out)
        .env("LBMH_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env_out.join("design.json").exists());
    assert!(!flag_out.exists());
}

#[test]
fn outputs_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "1", "2", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        ok(
            &["esjd-scan", "--seed", "11", "--n-grid", "8,16", "--samples", "400", "--golden-iters", "6", "--threads", threads],
            &out,
        );
        ok(&["poisson", "--seed", "11", "--reps", "2", "--iters", "600", "--threads", threads], &out);
        outputs.push((
            std::fs::read(out.join("scan.csv")).unwrap(),
            std::fs::read(out.join("poisson.csv")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}
