use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn simulate(args: &[&str], env_root: Option<&Path>, cwd: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_simulate"));
    cmd.args(args).current_dir(cwd).stdin(Stdio::null()).env_remove("SPINFRINGE_OUT");
    if let Some(root) = env_root {
        cmd.env("SPINFRINGE_OUT", root);
    }
    cmd.output().expect("binary runs")
}

fn error_line(out: &Output) -> Value {
    assert!(!out.status.success(), "expected failure, got {:?}", out.status);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

fn ok_line(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.lines().last().expect("a summary line")).unwrap()
}

#[test]
fn invalid_value_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[grating]\nopen_fraction = 1.2\n").unwrap();
    let out = simulate(&[cfg.to_str().unwrap()], None, dir.path());
    let e = error_line(&out);
    assert_eq!(e["status"], "error");
    assert_eq!(e["kind"], "parse");
    assert_eq!(e["path"], "grating.open_fraction");
}

#[test]
fn unknown_key_and_bad_unit_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&["--override", "packet.colour=\"red\""], None, dir.path());
    assert_eq!(error_line(&out)["kind"], "parse");
    let out = simulate(&["--override", "b2.gradient=\"560 T\""], None, dir.path());
    let e = error_line(&out);
    assert_eq!(e["path"], "b2.gradient");
}

#[test]
fn unknown_preset_and_usage_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(error_line(&simulate(&["--preset", "nope"], None, dir.path()))["status"], "error");
    assert_eq!(error_line(&simulate(&["--bogus-flag"], None, dir.path()))["kind"], "usage");
    assert_eq!(error_line(&simulate(&["--threads", "0"], None, dir.path()))["kind"], "usage");
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = error_line(&simulate(&["does/not/exist.toml"], None, dir.path()));
    assert_eq!(e["kind"], "io");
}

#[test]
fn echo_run_writes_only_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("echo");
    let out = simulate(
        &[
            "--preset",
            "field_free",
            "--override",
            "variant=\"fast\"",
            "--override",
            "plan.steps=0",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        None,
        dir.path(),
    );
    let line = ok_line(&out);
    assert_eq!(line["scenario"], "field_free");
    assert_eq!(line["variant"], "fast");
    assert_eq!(line["outputs"], 0);
    let manifest: Value = serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert!((manifest["initial_state"]["norm"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(std::fs::read_dir(&out_dir).unwrap().count(), 1);
}

#[test]
fn environment_sets_the_default_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("root");
    let out = simulate(
        &["--preset", "selffield", "--override", "variant=\"fast\"", "--override", "plan.steps=0"],
        Some(&root),
        dir.path(),
    );
    ok_line(&out);
    assert!(root.join("selffield").join("manifest.json").is_file());
}

#[test]
fn b1_sweep_writes_the_flip_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        "scenario = \"b1_sweep\"\nvariant = \"fast\"\n[sweep]\nchi = [0.0, 0.5, 1.0]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("sweep");
    let out = simulate(
        &[cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--threads", "1"],
        None,
        dir.path(),
    );
    ok_line(&out);
    let csv = std::fs::read_to_string(out_dir.join("flip.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("chi,P_flip,P_flip_analytic"));
    for row in lines {
        let v: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((v[1] - v[2]).abs() < 1e-12, "row {row}");
    }
}
