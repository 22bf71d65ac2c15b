use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ice_core::behavior::BehaviorDistribution;
use ice_core::fixtures::mg1;
use ice_core::io::{read_distribution, read_json, save_game, ModelFile};

fn ice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ice")).args(args).output().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn samplebound_prints_count() {
    let out = ice(&["samplebound", "--epsilon", "0.1", "--delta", "0.05", "--mods-size", "12", "--K", "4"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "1513");
    let bad = ice(&["samplebound", "--epsilon", "1.5", "--delta", "0.05", "--mods-size", "12", "--K", "4"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn pipeline_on_mg1() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("world");
    let cfg = configs().join("mg1.json");
    let out = ice(&["gen", s(&cfg), "--out", s(&world)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["game.json", "w_star.json", "sigma.json", "equilibrium.json"] {
        assert!(world.join(f).exists(), "{f} missing");
    }

    let samples = dir.path().join("samples.csv");
    let out = ice(&["sample", "--sigma", s(&world.join("sigma.json")), "--m", "50", "--seed", "3", "--out", s(&samples)]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&samples).unwrap().lines().count(), 51);

    let fitted = dir.path().join("fit");
    let out = ice(&[
        "fit",
        "--game",
        s(&world.join("game.json")),
        "--samples",
        s(&samples),
        "--out",
        s(&fitted),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model: ModelFile = read_json(&fitted.join("model.json")).unwrap();
    assert_eq!(model.w_hat.len(), 2);
    let pred = read_distribution(&fitted.join("predicted.json")).unwrap();
    assert_eq!(pred.len(), 4);
    let cert: serde_json::Value = read_json(&fitted.join("certificate.json")).unwrap();
    assert!(cert["max_violation"].as_f64().unwrap() <= 1e-6);

    let out = ice(&["eval", "--pred", s(&fitted.join("predicted.json")), "--truth", s(&world.join("sigma.json"))]);
    assert!(out.status.success());
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(metrics["log_loss"].as_f64().unwrap().is_finite());
}

#[test]
fn missing_input_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ice(&["fit", "--game", "/nonexistent.json", "--samples", "/nonexistent.csv", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = ice(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

fn write_mg1_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let game = dir.join("game.json");
    save_game(&game, &mg1()).unwrap();
    let samples = dir.join("samples.csv");
    std::fs::write(&samples, "outcome\n0\n3\n0\n1\n").unwrap();
    (game, samples)
}

#[test]
fn feature_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (game, samples) = write_mg1_inputs(dir.path());
    let other = dir.path().join("other.json");
    save_game(&other, &ice_core::fixtures::random_game(vec![2, 2], 3, 1)).unwrap();
    let out = ice(&[
        "fit",
        "--game",
        s(&game),
        "--samples",
        s(&samples),
        "--transfer-game",
        s(&other),
        "--out",
        s(&dir.path().join("fit")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unconverged_fit_exits_4_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let (game, samples) = write_mg1_inputs(dir.path());
    let fitted = dir.path().join("fit");
    let out = ice(&[
        "fit",
        "--game",
        s(&game),
        "--samples",
        s(&samples),
        "--T",
        "1",
        "--tol",
        "1e-12",
        "--out",
        s(&fitted),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let model: ModelFile = read_json(&fitted.join("model.json")).unwrap();
    assert!(!model.converged);
    let pred: BehaviorDistribution = read_distribution(&fitted.join("predicted.json")).unwrap();
    assert_eq!(pred.len(), 4);
}

#[test]
fn out_of_range_sample_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (game, samples) = write_mg1_inputs(dir.path());
    std::fs::write(&samples, "outcome\n9\n").unwrap();
    let out = ice(&["fit", "--game", s(&game), "--samples", s(&samples), "--out", s(&dir.path().join("f"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn swap_class_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (game, samples) = write_mg1_inputs(dir.path());
    let fitted = dir.path().join("fit");
    let out = ice(&["fit", "--game", s(&game), "--samples", s(&samples), "--mods", "swap", "--tol", "1e-3", "--out", s(&fitted)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
