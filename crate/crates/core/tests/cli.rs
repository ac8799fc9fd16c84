use std::path::Path;
use std::process::Command;

use sgfm_core::io::{read_field, write_field};
use sgfm_core::{gaussian_field, make_grid};

fn sgfm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sgfm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &std::process::Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one json object")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn transform_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("u.sgff");
    let f = gaussian_field(make_grid(2, 16).unwrap(), 2, 4);
    write_field(&input, &f).unwrap();
    let fwd = dir.path().join("fwd");
    let inv = dir.path().join("inv");

    stdout_json(&sgfm(&[
        "transform", "--input", s(&input), "--family", "db4", "--levels", "3", "--out", s(&fwd),
    ]));
    let coeffs = fwd.join("coefficients.sgff");
    let report = stdout_json(&sgfm(&[
        "transform", "--input", s(&coeffs), "--inverse", "--family", "db4", "--levels", "3",
        "--reference", s(&input), "--out", s(&inv),
    ]));
    assert!(report["relative_error"].as_f64().unwrap() < 1e-12);
    let back = read_field(inv.join("reconstructed.sgff")).unwrap();
    assert!(back.sub(&f).max_abs() < 1e-12);
}

#[test]
fn project_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("v.sgff");
    write_field(&input, &gaussian_field(make_grid(3, 8).unwrap(), 3, 2)).unwrap();
    let once = dir.path().join("once");
    let twice = dir.path().join("twice");
    let first = stdout_json(&sgfm(&["project", "--input", s(&input), "--out", s(&once)]));
    assert!(first["max_divergence"].as_f64().unwrap() < 1e-10);
    let again = stdout_json(&sgfm(&[
        "project", "--input", s(&once.join("projected.sgff")), "--out", s(&twice),
    ]));
    assert!(again["relative_change"].as_f64().unwrap() < 1e-12);
}

#[test]
fn simulate_then_diag_matches_taylor_green_decay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    std::fs::write(
        &cfg,
        r#"{"version": 1, "simulate": {"ndim": 2, "n": 32, "viscosity": 0.1, "dt": 0.001,
            "steps": 100, "initial": {"kind": "taylor_green"}}}"#,
    )
    .unwrap();
    let traj = dir.path().join("traj");
    let out = sgfm(&["simulate", "--config", s(&cfg), "--out", s(&traj)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(traj.join("trajectory.json").exists());

    let diag = dir.path().join("diag");
    let report = stdout_json(&sgfm(&["diag", "--input", s(&traj), "--out", s(&diag)]));
    let ratio = report["final_energy_ratio"].as_f64().unwrap();
    let expect = (-4.0f64 * 0.1 * 0.1).exp();
    assert!((ratio / expect - 1.0).abs() < 0.01, "{ratio} vs {expect}");
    assert_eq!(report["bound_violations"].as_u64(), Some(0));
    assert!(diag.join("energy.csv").exists() && diag.join("vorticity.csv").exists());
}

#[test]
fn train_then_sample_uses_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let train_cfg = dir.path().join("train.json");
    std::fs::write(
        &train_cfg,
        r#"{"version": 1, "train": {"epochs": 3, "batch_size": 4, "learning_rate": 0.002,
            "dataset": {"kind": "point_mass", "count": 8}, "ndim": 2, "n": 8, "j_split": 1, "hidden": 4}}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = sgfm(&["train", "--config", s(&train_cfg), "--out", s(&run), "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);

    let sample_cfg = dir.path().join("sample.json");
    let ckpt = run.join("checkpoint.sgfc");
    std::fs::write(
        &sample_cfg,
        serde_json::json!({"version": 1, "sample": {"ndim": 2, "n": 8, "steps": 20, "j_split": 1,
            "levels": 2, "score": {"kind": "checkpoint", "path": ckpt}}})
        .to_string(),
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for o in [&a, &b] {
        let out = sgfm(&["sample", "--config", s(&sample_cfg), "--out", s(o), "--seed", "5"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        std::fs::read(a.join("sample.sgff")).unwrap(),
        std::fs::read(b.join("sample.sgff")).unwrap()
    );
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.sgff");
    let mut bytes = sgfm_core::io::encode_field(&gaussian_field(make_grid(2, 8).unwrap(), 1, 0));
    bytes[..4].copy_from_slice(b"NOPE");
    std::fs::write(&input, bytes).unwrap();
    let out = sgfm(&["transform", "--input", s(&input), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"version": 9, "simulate": {}}"#).unwrap();
    assert_eq!(sgfm(&["simulate", "--config", s(&cfg)]).status.code(), Some(2));
    assert_eq!(sgfm(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn unstable_simulation_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    std::fs::write(
        &cfg,
        r#"{"version": 1, "simulate": {"ndim": 2, "n": 16, "viscosity": 0.1, "dt": 10.0,
            "steps": 200, "initial": {"kind": "gaussian"}}}"#,
    )
    .unwrap();
    let out = sgfm(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
