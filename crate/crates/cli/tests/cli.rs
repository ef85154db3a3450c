use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn regflow() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regflow"))
}

fn preset(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.toml"))).unwrap()
}

#[test]
fn list_shows_anchored_presets() {
    let out = regflow().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.starts_with("thm-5.6-compression")).expect("compression preset listed");
    assert!(line.contains("can be taken to be e^{L(Ω',b)}"));
    assert!(text.lines().any(|l| l.starts_with("prop-7.3-oscillation")));
    assert!(text.lines().next().unwrap().contains("runtime"));
}

#[test]
fn empty_preset_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = regflow().arg("--presets").arg(dir.path()).arg("list").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no presets"));
}

#[test]
fn unknown_key_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, preset("semigroup-linear").replace("[experiment]", "[experiment]\nstride = 3")).unwrap();
    let out_dir = dir.path().join("out");
    let out = regflow().arg("run").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stride"));
    assert!(!out_dir.exists());
}

#[test]
fn missing_config_is_an_error() {
    let out = regflow().args(["run", "no-such-preset"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn semigroup_run_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = regflow().args(["run", "semigroup-linear", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["pass"], true);
    let digest = report["config_digest"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
    let check = &report["checks"][0];
    assert_eq!(check["check"], "semigroup");
    assert!(check["metrics"]["position_defect"].as_f64().unwrap() <= 1e-6);

    let mut csv = csv::Reader::from_path(dir.path().join("densities.csv")).unwrap();
    let headers = csv.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "config_digest"));
    assert!(headers.iter().any(|h| h == "tool_version"));
}

#[test]
fn seed_override_changes_digest() {
    let dir = tempfile::tempdir().unwrap();
    let digest = |seed: &str| {
        let out_dir = dir.path().join(seed);
        let out = regflow().args(["run", "jacobian-linear", "--seed", seed, "--out"]).arg(&out_dir).output().unwrap();
        assert!(out.status.success());
        let report: Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
        report["config_digest"].as_str().unwrap().to_owned()
    };
    assert_ne!(digest("1"), digest("2"));
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = regflow().args(["run", "no-blowup-cubic", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["checks"][0]["status"], "criterion-not-satisfied");
}
