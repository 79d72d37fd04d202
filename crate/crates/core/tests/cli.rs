//! Exit codes, output files and manifests of the command-line front end.

use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carleman-lab")).arg("--out").arg(out).args(args).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_flag_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["ipp-check", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(d.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["ipp-check", "--set", "frobnicate=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("frobnicate"));
}

#[test]
fn help_exits_zero() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn inadmissible_tau_h_is_assertion_failure() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["carleman-sweep", "--tau-h", "0.3", "--n", "10", "--samples", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let s = std::fs::read_to_string(d.path().join("summary.json")).unwrap();
    assert!(s.contains("inadmissible-parameter"));
    let m = json(&d.path().join("manifest.json"));
    assert_eq!(m["config"]["tau_h"], "0.3");
}

#[test]
fn ipp_check_csv_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["--seed", "3", "ipp-check", "--n", "4,8", "--trials", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(d.path().join("ipp-check.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("identity,N,trial,residual"));
    assert_eq!(lines.count(), 8 * 2 * 5);
    let m = json(&d.path().join("manifest.json"));
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["n"], "4,8");
    // defaults the run used are echoed too
    assert_eq!(m["config"]["tol"], "0.0000000001");
    let dat = std::fs::read_to_string(d.path().join("ipp-check.dat")).unwrap();
    assert!(dat.lines().filter(|l| !l.starts_with('#')).all(|l| l.split_whitespace().count() == 2));
    assert_eq!(json(&d.path().join("summary.json"))["pass"], true);
}

#[test]
fn json_format_writes_rows_as_objects() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["--format", "json", "elliptic-check", "--n", "10,20"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = json(&d.path().join("elliptic-check.json"));
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert_eq!(rows[1]["N"], "20");
}

#[test]
fn stability_sweep_reads_config_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("sweep.cfg");
    std::fs::write(&cfg, "# small run\nn = 10, 20\nsamples = 3\nvariant = boundary\nt_final = 1.6\n").unwrap();
    let out = d.path().join("out");
    let o = run(&out, &["stability-sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["samples"], "3");
    assert_eq!(m["config"]["family"], "mixed");
    let csv = std::fs::read_to_string(out.join("stability-sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}

#[test]
fn short_horizon_is_rejected_for_gamma_configuration() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["stability-sweep", "--set", "t_final=1.2", "--samples", "1"]);
    assert_eq!(o.status.code(), Some(1));
}
