use std::fs;
use std::process::{Command, Output};

use tempfile::TempDir;

fn driftmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftmark"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = driftmark(args);
    assert!(
        out.status.success(),
        "driftmark {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_owned()
}

fn small_config(dir: &TempDir) -> String {
    let p = path(dir, "config.json");
    fs::write(
        &p,
        r#"{
  "n_seeds": 100,
  "samplers": [{"kind": "ddim", "eta": 0.0}],
  "attacks": [{"attack": "none"}, {"attack": "additive-noise", "sigma": 0.25}]
}"#,
    )
    .unwrap();
    p
}

fn csv_field(text: &str, column: &str) -> String {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == column).unwrap();
    row[i].to_owned()
}

#[test]
fn embed_then_extract_recovers_the_message() {
    let dir = TempDir::new().unwrap();
    let image = path(&dir, "x.csv");
    ok(&["embed", "--seed", "3", "--out", &image]);
    let lines = fs::read_to_string(&image).unwrap().lines().count();
    assert_eq!(lines, 1 + 256);

    let report = ok(&["extract", "--input", &image, "--threshold", "0.5"]);
    assert_eq!(csv_field(&report, "bit_acc").parse::<f64>().unwrap(), 1.0);
    assert_eq!(csv_field(&report, "detected"), "true");
}

#[test]
fn embedding_is_reproducible_and_seeded() {
    let a = ok(&["embed", "--seed", "1", "--json"]);
    let b = ok(&["embed", "--seed", "1", "--json"]);
    let c = ok(&["embed", "--seed", "2", "--json"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let doc: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(doc["window"], "1:50");
    assert_eq!(doc["latent"].as_array().unwrap().len(), 64);
}

#[test]
fn custom_message_and_window_flags() {
    let doc: serde_json::Value = serde_json::from_str(&ok(&[
        "embed",
        "--json",
        "--preset",
        "Q",
        "--window",
        "10:30",
        "--lambda",
        "0.5",
        "--message",
        "deadbeef",
    ]))
    .unwrap();
    assert_eq!(doc["window"], "10:30");
    assert_eq!(doc["lambda"], 0.5);
    assert_eq!(doc["message"], "deadbeef");
}

#[test]
fn attack_round_trip_through_files() {
    let dir = TempDir::new().unwrap();
    let image = path(&dir, "x.csv");
    let attacked = path(&dir, "y.csv");
    ok(&["embed", "--out", &image]);
    ok(&["attack", "--input", &image, "--attack", "none", "--out", &attacked]);
    assert_eq!(
        fs::read_to_string(&image).unwrap(),
        fs::read_to_string(&attacked).unwrap()
    );

    ok(&[
        "attack",
        "--input",
        &image,
        "--attack",
        "noise:0.25",
        "--seed",
        "4",
        "--out",
        &attacked,
    ]);
    assert_ne!(
        fs::read_to_string(&image).unwrap(),
        fs::read_to_string(&attacked).unwrap()
    );
    let report = ok(&["extract", "--input", &attacked]);
    assert!(csv_field(&report, "bit_acc").parse::<f64>().unwrap() > 0.9);
}

#[test]
fn suite_writes_one_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir);
    let out = path(&dir, "metrics.csv");
    ok(&["suite", "--config", &cfg, "--out", &out]);
    let text = fs::read_to_string(&out).unwrap();
    // 1 sampler × 2 presets × 2 attacks
    assert_eq!(text.lines().count(), 1 + 4);
    assert_eq!(text, ok(&["suite", "--config", &cfg]));
}

#[test]
fn diagnostics_has_one_row_per_step() {
    let text = ok(&["diagnostics"]);
    assert_eq!(text.lines().next().unwrap(), "t,gamma,eps_norm_Q,eps_norm_R");
    assert_eq!(text.lines().count(), 1 + 50);
}

#[test]
fn calibrate_from_stats_file() {
    let dir = TempDir::new().unwrap();
    let stats = path(&dir, "null.json");
    let values: Vec<f64> = (1..=100).map(f64::from).collect();
    fs::write(&stats, serde_json::to_string(&values).unwrap()).unwrap();
    let out = ok(&["calibrate", "--stats", &stats, "--fpr", "0.05"]);
    assert_eq!(csv_field(&out, "threshold").parse::<f64>().unwrap(), 95.0);
}

#[test]
fn sweep_with_explicit_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir);
    let text = ok(&[
        "sweep", "--config", &cfg, "--window", "1:50", "--lambda", "0.5", "--lambda", "1",
    ]);
    assert_eq!(text.lines().count(), 1 + 2);
}

#[test]
fn errors_are_reported_with_nonzero_exit() {
    let out = driftmark(&["extract", "--input", "/nonexistent/x.csv"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("driftmark: "), "{err}");
    assert!(err.contains("/nonexistent/x.csv"), "{err}");

    let out = driftmark(&["attack", "--input", "x.csv", "--attack", "noise:-1"]);
    assert!(!out.status.success());

    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.json");
    fs::write(&bad, "{\"n_seeds\": 0}").unwrap();
    let out = driftmark(&["suite", "--config", &bad]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_seeds"));
}
