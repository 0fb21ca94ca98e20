//! Runs the `gcvit` binary end to end on small synthetic data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gcvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcvit"))
        .arg("-q")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gcvit(args);
    assert!(
        out.status.success(),
        "gcvit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 3 classes of 16x16 images with a model small enough for quick runs.
const SMALL_MODEL: &[&str] = &[
    "--input-size", "16", "--patch-size", "4", "--stem-channels", "4", "--stage-dims", "8,16",
    "--stage-depths", "1,1", "--num-heads", "2,2",
];

fn synth(dir: &Path, per_class: &str, seed: &str) -> PathBuf {
    let root = dir.join(format!("data_{seed}"));
    ok(&["synth", "--out", s(&root), "--classes", "3", "--per-class", per_class, "--size", "16", "--seed", seed]);
    root
}

#[test]
fn prepare_writes_manifests_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let root = dir.path().join("data");
    ok(&["synth", "--out", s(&root), "--classes", "12", "--per-class", "10", "--size", "8"]);
    let msg = ok(&["prepare", "--data", s(&root), "--out", s(&out), "--seed", "3"]);
    assert!(msg.contains("96 train, 24 val"), "{msg}");
    let summary = fs::read_to_string(out.join("split_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "class_id,class_name,total,train,val");
    assert_eq!(lines[1], "0,class_00,10,8,2");
    assert_eq!(lines.len(), 14);
    assert!(lines[13].ends_with("total,120,96,24"));
    assert_eq!(fs::read_to_string(out.join("classes.txt")).unwrap().lines().count(), 12);

    let again = dir.path().join("m2");
    ok(&["prepare", "--data", s(&root), "--out", s(&again), "--seed", "3"]);
    for f in ["train.csv", "val.csv", "classes.txt", "split_summary.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = gcvit(&["train", "--train", s(&missing), "--val", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    assert_eq!(gcvit(&["train"]).status.code(), Some(2));
    assert_eq!(gcvit(&["prepare", "--data", s(&missing), "--out", "x"]).status.code(), Some(2));
    assert_eq!(gcvit(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train_root = synth(d, "4", "1");
    ok(&["prepare", "--data", s(&train_root), "--out", s(&d.join("m")), "--train-fraction", "0.75"]);

    // Zero epochs still writes the initial checkpoint and a header-only log.
    let mut args = vec![
        "train", "--train", "", "--val", "", "--out", "", "--max-epochs", "0",
    ];
    let (tr, va, o0) = (d.join("m/train.csv"), d.join("m/val.csv"), d.join("run0"));
    args[2] = s(&tr);
    args[4] = s(&va);
    args[6] = s(&o0);
    args.extend_from_slice(SMALL_MODEL);
    let msg = ok(&args);
    assert!(msg.contains("no epochs run"), "{msg}");
    assert!(o0.join("best.ckpt").is_file());
    assert_eq!(
        fs::read_to_string(o0.join("train_log.csv")).unwrap(),
        "epoch,train_loss,train_acc,val_loss,val_acc,lr\n"
    );

    let o1 = d.join("run1");
    args[6] = s(&o1);
    args[8] = "3";
    args.extend_from_slice(&["--lr-max", "1e-3", "--batch-size", "4"]);
    ok(&args);
    let log = fs::read_to_string(o1.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(o1.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs_run"], 3);

    let ckpt = o1.join("best.ckpt");
    let ev = d.join("eval");
    let acc = ok(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&va), "--out", s(&ev), "--log", s(&o1.join("train_log.csv"))]);
    assert!(acc.starts_with("accuracy: "), "{acc}");
    for f in ["report.csv", "confusion.csv", "per_class.csv", "curves.csv", "metrics.json"] {
        assert!(ev.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read(ev.join("curves.csv")).unwrap(), log.as_bytes());
    let ev2 = d.join("eval2");
    ok(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&va), "--out", s(&ev2), "--log", s(&o1.join("train_log.csv"))]);
    for f in ["report.csv", "confusion.csv", "per_class.csv", "curves.csv", "metrics.json"] {
        assert_eq!(fs::read(ev.join(f)).unwrap(), fs::read(ev2.join(f)).unwrap(), "{f}");
    }

    let image = train_root.join("class_01/img_000.ppm");
    let first = ok(&["predict", "--checkpoint", s(&ckpt), "--image", s(&image)]);
    assert_eq!(first, ok(&["predict", "--checkpoint", s(&ckpt), "--image", s(&image)]));
    let lines: Vec<&str> = first.lines().collect();
    assert!(lines[0].starts_with("prediction: class_"));
    let probs: Vec<f64> = lines[1..].iter().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(probs.len(), 3);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn eval_rejects_class_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let root = synth(d, "2", "4");
    ok(&["prepare", "--data", s(&root), "--out", s(&d.join("m")), "--train-fraction", "0.5"]);
    let mut args = vec!["train", "--train", "", "--val", "", "--out", "", "--max-epochs", "0"];
    let (tr, va, o) = (d.join("m/train.csv"), d.join("m/val.csv"), d.join("run"));
    args[2] = s(&tr);
    args[4] = s(&va);
    args[6] = s(&o);
    args.extend_from_slice(SMALL_MODEL);
    ok(&args);

    let two = d.join("two");
    ok(&["synth", "--out", s(&two), "--classes", "2", "--per-class", "1", "--size", "16"]);
    let out = gcvit(&["eval", "--checkpoint", s(&o.join("best.ckpt")), "--data", s(&two), "--out", s(&d.join("e"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("3 classes but the manifest has 2"));
}

#[test]
fn gradcheck_negative_control_fails() {
    let out = gcvit(&["gradcheck", "--corrupt-gradient", "--samples-per-tensor", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
