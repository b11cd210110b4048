use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_amfuse"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn params_reports_the_paper_increment() {
    let cfg = repo("configs/paper_b2.json");
    let v = json(&run(&["params", "--config", cfg.to_str().unwrap(), "--json"]));
    assert_eq!(v["per_modality_increment"], 11268);
    assert_eq!(v["total"], 50_610_945);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["selftest", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["params", "--config", "/nonexistent.json"]).status.code(), Some(2));
    let help = run(&["train", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("--config"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"scene": {"size": 33}}"#).unwrap();
    let out = run(&["synth", "--spec", bad.to_str().unwrap(), "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("32"));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["convert", "corrupt", "synth", "train", "eval", "params", "gradcheck", "selftest"] {
        assert_eq!(run(&[sub, "--help"]).status.code(), Some(0), "{sub}");
    }
}

#[test]
fn selftest_passes() {
    let v = json(&run(&["selftest", "--json"]));
    let checks = v.as_array().unwrap();
    assert!(checks.len() >= 10);
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn gradcheck_one_block() {
    let v = json(&run(&["gradcheck", "--block", "hub", "--seeds", "2", "--json"]));
    assert_eq!(v[0]["name"], "hub");
    assert!(v[0]["max_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_owned();
    std::fs::write(p("spec.json"), r#"{"scene": {"size": 32, "num_classes": 4}, "train": 3, "val": 2}"#).unwrap();
    std::fs::write(
        p("run.json"),
        r#"{"model": {"stage_channels": [8, 16, 24, 32], "stage_depths": [1, 1, 1, 1],
            "heads": [1, 1, 2, 2], "modalities": ["rgb", "depth"], "num_classes": 4, "decoder_dim": 16},
            "train": {"lr": 0.001, "epochs": 2, "warmup_epochs": 1, "batch_size": 2}}"#,
    )
    .unwrap();
    let s = json(&run(&["synth", "--spec", &p("spec.json"), "--out", &p("data"), "--json"]));
    assert_eq!(s["splits"]["train"], 3);

    let t = json(&run(&["train", "--config", &p("run.json"), "--data", &p("data"), "--out", &p("run"), "--json"]));
    assert_eq!(t["epochs"], 2);
    let lines = std::fs::read_to_string(p("run/metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["loss"].is_f64() && v["val_miou"].is_f64());
    }

    let table = run(&["eval", "--weights", &p("run/model.nnz"), "--data", &p("data"), "--group-by", "corruption"]);
    assert!(table.status.success());
    let head = String::from_utf8_lossy(&table.stdout).lines().next().unwrap().to_owned();
    assert_eq!(head.split_whitespace().collect::<Vec<_>>(), ["clean", "MB", "OE", "UE", "LJ", "EL", "Mean"]);

    let a = json(&run(&["eval", "--weights", &p("run/model.nnz"), "--data", &p("data"), "--json"]));
    let b = json(&run(&["eval", "--weights", &p("run/model.nnz"), "--data", &p("data"), "--json"]));
    assert_eq!(a, b);
    assert_eq!(a["groups"]["clean"]["samples"], 2);
}

#[test]
fn convert_and_corrupt_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_owned();
    std::fs::write(p("spec.json"), r#"{"scene": {"size": 32}, "train": 1}"#).unwrap();
    json(&run(&["synth", "--spec", &p("spec.json"), "--out", &p("d"), "--json"]));
    let sample = |f: &str| p(&format!("d/train/000000/{f}"));

    for (kind, input, extra) in [
        ("depth", sample("depth.pgm"), vec![]),
        ("hha", sample("depth.pgm"), vec![]),
        ("event", sample("event.evt"), vec!["--size", "32"]),
        ("lidar", sample("lidar.xyz"), vec!["--size", "32"]),
    ] {
        let out = p(&format!("{kind}.tsr"));
        let mut args = vec!["convert", "--kind", kind, "--in", &input, "--out", &out, "--json"];
        args.extend(extra);
        let v = json(&run(&args));
        assert_eq!(v["height"], 32, "{kind}");
    }
    assert_eq!(run(&["convert", "--kind", "event", "--in", &sample("event.evt"), "--out", &p("x.ppm")]).status.code(), Some(1));

    let jitter = |seed: &str| json(&run(&["corrupt", "--mode", "lj", "--seed", seed, "--in", &sample("lidar.xyz"), "--out", &p("j.xyz"), "--json"]));
    assert_eq!(jitter("4"), jitter("4"));
    assert_ne!(jitter("4"), jitter("5"));

    let v = json(&run(&["corrupt", "--mode", "el", "--size", "32", "--in", &sample("event.evt"), "--out", &p("e.evt"), "--json"]));
    assert_eq!(v["width"], 8);
    for mode in ["mb", "oe", "ue"] {
        json(&run(&["corrupt", "--mode", mode, "--in", &sample("rgb.ppm"), "--out", &p(&format!("{mode}.ppm")), "--json"]));
    }
}
