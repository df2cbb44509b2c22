//! CLI surface smoke tests: exit codes, error reporting, and the
//! synth -> extract path not covered by the acceptance suite.

use std::process::Command;

fn trajvad() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajvad"))
}

#[test]
fn no_subcommand_is_a_usage_error() {
    let out = trajvad().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = trajvad().args(["synth", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_file_reports_and_exits_one() {
    let out = trajvad()
        .args(["eval", "--scores", "/nonexistent/scores.csv", "--labels", "/nonexistent/l.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error"), "stderr: {err}");
    assert!(err.contains("scores.csv"), "stderr: {err}");
}

#[test]
fn invalid_anomaly_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = trajvad()
        .args([
            "synth",
            "--out",
            dir.path().to_str().unwrap(),
            "--anomaly-rate",
            "0.5",
            "--anomalies",
            "teleportation",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("teleportation"));
}

#[test]
fn synth_then_extract_reports_window_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let out = trajvad()
        .args(["synth", "--out", dir.path().to_str().unwrap(), "--videos", "2", "--frames", "64"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = trajvad()
        .args([
            "extract",
            "--tracks",
            &d("tracks.csv"),
            "--meta",
            &d("meta.csv"),
            "--out",
            &d("windows.csv"),
            "--window",
            "16",
            "--stride",
            "8",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("extracted"), "stdout: {stdout}");
    assert!(dir.path().join("windows.csv").exists());
}

#[test]
fn score_variant_upgrade_is_rejected() {
    // a trajectory-only checkpoint cannot be scored as the pose variant
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let out = trajvad().args(args).output().unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["synth", "--out", dir.path().to_str().unwrap(), "--videos", "4", "--frames", "96"]);
    run(&[
        "train", "--tracks", &d("tracks.csv"), "--meta", &d("meta.csv"), "--out",
        &d("model.ckpt"), "--k", "2", "--hidden", "8", "--epochs", "1", "--stride", "8",
    ]);
    let out = trajvad()
        .args([
            "score", "--model", &d("model.ckpt"), "--tracks", &d("tracks.csv"), "--meta",
            &d("meta.csv"), "--out", &d("scores.csv"), "--variant", "p",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pose branch"));
}
