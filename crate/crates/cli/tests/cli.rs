//! Black-box tests of the command-line surface: subcommands, exit codes,
//! and the emitted file layout.

use std::path::PathBuf;
use std::process::Command;

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_momdet")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("momdet_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn carleman_subcommand_succeeds() {
    let out = Command::new(exe())
        .args([
            "carleman",
            "--measure",
            r#"{"family":"gaussian","mean":[0],"sd":[1]}"#,
            "--no-timestamp",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["analyses"][0]["kind"], "carleman");
    assert_eq!(
        report["analyses"][0]["result"]["Determinacy"]["verdict"]["outcome"],
        "SUFFICIENT_DETERMINATE"
    );
}

#[test]
fn inconclusive_is_not_a_failure_exit() {
    // lognormal fails the criterion, but that is a verdict, not an error
    let out = Command::new(exe())
        .args(["carleman", "--measure", r#"{"family":"lognormal"}"#, "--no-timestamp"])
        .output()
        .unwrap();
    assert!(out.status.success(), "verdicts never fail the run");
}

#[test]
fn analysis_error_yields_exit_code_one() {
    // a gaussian is not supported in the positive cone
    let out = Command::new(exe())
        .args([
            "carleman",
            "--measure",
            r#"{"family":"gaussian","mean":[0],"sd":[1]}"#,
            "--mode",
            "stieltjes",
            "--no-timestamp",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_manifest_exits_two() {
    let dir = tmp_dir("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"dimension":0,"measure":{"family":"lognormal"},"analyses":[]}"#)
        .unwrap();
    let out = Command::new(exe()).args(["analyze", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn csv_bundle_layout() {
    let dir = tmp_dir("csv");
    let manifest = dir.join("m.json");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        &manifest,
        r#"{"dimension":1,"measure":{"family":"gaussian","mean":[0],"sd":[1]},
            "analyses":[{"kind":"carleman","M":16},
                        {"kind":"density","target":"sin(x1)","N":6}]}"#,
    )
    .unwrap();
    let out = Command::new(exe())
        .args([
            "analyze",
            manifest.to_str().unwrap(),
            "--format",
            "csv",
            "--output",
            dir.join("out").to_str().unwrap(),
            "--no-timestamp",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("out/report.json").exists());
    assert!(dir.join("out/a0_carleman_series.csv").exists());
    assert!(dir.join("out/a1_density.csv").exists());
    let density_csv = std::fs::read_to_string(dir.join("out/a1_density.csv")).unwrap();
    assert!(density_csv.starts_with("degree,error\n"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn classify_weight_subcommand() {
    let out = Command::new(exe())
        .args([
            "classify-weight",
            "--weight",
            r#"{"kind":"repeated_log","a":[1,1],"p":[1,2]}"#,
            "--no-timestamp",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        report["analyses"][0]["result"]["WeightClassification"]["verdict"]["outcome"],
        "NOT_QUASI_ANALYTIC"
    );
    // the companion log-negativity diagnostic is finite for the sharp case
    assert_eq!(
        report["analyses"][1]["result"]["LogNegativity"]["verdict"]["outcome"],
        "FINITE"
    );
}

#[test]
fn stieltjes_subcommand_with_relation() {
    let out = Command::new(exe())
        .args([
            "stieltjes",
            "--measure",
            r#"{"family":"exponential","rate":1.0}"#,
            "--e",
            "2",
            "--no-timestamp",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        report["analyses"][0]["result"]["Determinacy"]["strengthened"]["outcome"],
        "SUFFICIENT_DETERMINATE"
    );
    assert_eq!(
        report["analyses"][1]["result"]["StieltjesRelation"]["checks"][0]["passed"],
        true
    );
}

#[test]
fn criterion_subcommand() {
    let out = Command::new(exe())
        .args([
            "criterion",
            "--measure",
            r#"{"family":"gaussian","mean":[0],"sd":[1]}"#,
            "--spec",
            r#"{"kind":"radial_rho","R":2.0,"rho":"x1"}"#,
            "--no-timestamp",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        report["analyses"][0]["result"]["Determinacy"]["verdict"]["outcome"],
        "SUFFICIENT_DETERMINATE"
    );
}

#[test]
fn moments_subcommand_csv() {
    let dir = tmp_dir("moments");
    let out = Command::new(exe())
        .args([
            "moments",
            "--measure",
            r#"{"family":"gamma","shape":2.0,"scale":1.0}"#,
            "--max-degree",
            "8",
            "--format",
            "csv",
            "--output",
            dir.to_str().unwrap(),
            "--no-timestamp",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.join("a0_moments.csv")).unwrap();
    assert!(csv.starts_with("kind,j_or_alpha,m_or_s,sign,log_value,provenance,err\n"));
    assert!(csv.contains("closed_form"));
    let _ = std::fs::remove_dir_all(&dir);
}
