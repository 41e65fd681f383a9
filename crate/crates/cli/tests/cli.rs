use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use funad_core::feature_store::{write_labels, write_masks, ImageLabel, PixelMasks};

fn funad(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_funad"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = funad(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn toy_inputs(dir: &Path) {
    ok(dir, &["synth", "--n-normal", "300", "--n-anomaly", "30", "--seed", "1", "--out", "pool.funf"]);
    ok(dir, &["contaminate", "--pool", "pool.funf", "--ratio", "0.1", "--seed", "1", "--out", "train.funf", "--moved-out", "moved.json"]);
    ok(dir, &["synth", "--n-normal", "200", "--n-anomaly", "200", "--seed", "2", "--out", "test.funf"]);
}

const TRAIN: &[&str] = &[
    "train", "--features", "train.funf", "--epochs", "15", "--hidden1", "32", "--hidden2", "16",
    "--lr", "1e-3", "--seed", "4",
];

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = funad(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["synth", "contaminate", "stats", "train", "infer", "eval", "repro-motivation", "repro-toy"] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(funad(dir.path(), &["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(funad(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_features_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = funad(dir.path(), &["train", "--features", "missing.funf", "--checkpoint", "m.funw"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("missing.funf") && err.contains("No such file"), "{err}");
}

#[test]
fn invalid_threshold_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    toy_inputs(dir.path());
    let out = funad(dir.path(), &["train", "--features", "train.funf", "--checkpoint", "m.funw", "--tau-n", "0.95"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_reports_auroc() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy_inputs(d);
    assert!(d.join("train.truth.funl").exists());
    assert!(!d.join("train.funl").exists(), "training set must not carry labels");

    let mut args = TRAIN.to_vec();
    args.extend(["--checkpoint", "model.funw", "--log", "log.jsonl", "--truth", "train.truth.funl"]);
    ok(d, &args);
    let log = fs::read_to_string(d.join("log.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 15 * 330usize.div_ceil(32));
    for r in &rows {
        let total = r["total"].as_f64().unwrap();
        let parts = r["l_phi"].as_f64().unwrap() + 2.5 * r["l_ms"].as_f64().unwrap();
        assert!((total - parts).abs() < 1e-12);
        assert!(r["bank_purity"].is_number());
    }

    ok(d, &["infer", "--checkpoint", "model.funw", "--features", "test.funf", "--scores-out", "scores.csv"]);
    let report = ok(d, &["eval", "--scores", "scores.csv", "--labels", "test.funl"]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    let auroc = v["image_auroc"].as_f64().unwrap();
    assert!(auroc > 0.9, "held-out AUROC {auroc}");
    assert_eq!(v["n_pos"], 200);
}

#[test]
fn seeded_training_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy_inputs(d);
    let run = |threads: &str, tag: &str| {
        let ckpt = format!("m{tag}.funw");
        let log = format!("l{tag}.jsonl");
        let mut args = vec!["--threads", threads];
        args.extend_from_slice(TRAIN);
        args.extend(["--checkpoint", &ckpt, "--log", &log]);
        ok(d, &args);
        (fs::read(d.join(&ckpt)).unwrap(), fs::read(d.join(&log)).unwrap())
    };
    let a = run("1", "a");
    let b = run("1", "b");
    let c = run("4", "c");
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn synth_and_contaminate_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy_inputs(d);
    let first = fs::read(d.join("train.funf")).unwrap();
    ok(d, &["contaminate", "--pool", "pool.funf", "--ratio", "0.1", "--seed", "1", "--out", "again.funf"]);
    assert_eq!(first, fs::read(d.join("again.funf")).unwrap());
    let moved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("moved.json")).unwrap()).unwrap();
    assert_eq!(moved["moved_anomalies"].as_array().unwrap().len(), 30);
}

#[test]
fn maps_and_pixel_auroc() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n-normal", "6", "--n-anomaly", "2", "--patches-per-image", "16", "--seed", "3", "--out", "grid.funf"]);
    ok(d, &["train", "--features", "grid.funf", "--epochs", "2", "--hidden1", "8", "--hidden2", "4", "--batch-images", "4", "--checkpoint", "g.funw"]);
    ok(d, &[
        "infer", "--checkpoint", "g.funw", "--features", "grid.funf", "--scores-out", "g.csv",
        "--maps-out", "g.funa", "--map-size", "4x16",
    ]);
    let maps = funad_core::inference::load_maps(&d.join("g.funa")).unwrap();
    assert_eq!(maps.len(), 8);
    assert_eq!((maps[0].height, maps[0].width), (4, 16));

    let mut mask = vec![0u8; 8 * 64];
    for m in mask[6 * 64..].iter_mut().step_by(3) {
        *m = 1;
    }
    let masks = PixelMasks { height: 4, width: 16, data: mask };
    fs::write(d.join("g.funm"), write_masks(&masks).unwrap()).unwrap();
    let labels: Vec<ImageLabel> = (0..8)
        .map(|i| if i < 6 { ImageLabel::Normal } else { ImageLabel::Anomaly })
        .collect();
    fs::write(d.join("g.labels.funl"), write_labels(&labels).unwrap()).unwrap();
    fs::write(d.join("ex.json"), "[0]").unwrap();
    let out = ok(d, &[
        "eval", "--scores", "g.csv", "--labels", "g.labels.funl", "--maps", "g.funa", "--masks",
        "g.funm", "--exclude", "ex.json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let px = v["pixel_auroc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&px));
    assert_eq!(v["n_excluded"], 1);
}

#[test]
fn maps_need_a_size() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n-normal", "4", "--n-anomaly", "0", "--out", "a.funf"]);
    ok(d, &["train", "--features", "a.funf", "--epochs", "0", "--hidden1", "4", "--hidden2", "2", "--checkpoint", "a.funw"]);
    let out = funad(d, &["infer", "--checkpoint", "a.funw", "--features", "a.funf", "--scores-out", "a.csv", "--maps-out", "a.funa"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--map-size"));
}

#[test]
fn stats_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let table = ok(d, &["stats", "ratios", "--n-tau", "5"]);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("tau,p_nn,p_aa,p_na,nn_over_aa,nn_over_na"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert!((first[4] - 256.0).abs() / 256.0 < 0.01);

    ok(d, &["synth", "--n-normal", "50", "--n-anomaly", "50", "--out", "s.funf"]);
    let json = ok(d, &["stats", "empirical", "--features", "s.funf", "--bins", "10", "--hist-csv", "h.csv"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["matching"]["false_ratio"].as_f64().unwrap() < 0.2);
    assert_eq!(fs::read_to_string(d.join("h.csv")).unwrap().lines().count(), 11);
}

#[test]
fn repro_commands_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = ok(d, &["repro-motivation", "--seeds", "1", "--out-dir", "mot"]);
    assert!(text.contains("true_normal"));
    for f in ["ratios.csv", "histogram_seed0.csv", "motivation.json"] {
        assert!(d.join("mot").join(f).exists(), "{f}");
    }
    let text = ok(d, &["repro-toy", "--seeds", "1", "--epochs", "3", "--out-dir", "toy"]);
    assert!(text.contains("AUROC by epoch"));
    let csv = fs::read_to_string(d.join("toy/trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
