use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use dre::corpus::to_dialogre_json;
use dre::synth::engagement_dialogue;

fn dre(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dre"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A synthetic corpus plus its generated run.toml in `dir`.
fn synth(dir: &Path, seed: &str, size: &str) {
    ok(&dre(dir, &["synth", "--seed", seed, "--size", size, "--out", "."]));
}

const SMALL: [&str; 6] = ["--set", "encoder.d_h=16", "--set", "encoder.layers=1", "--set", "train.epochs=2"];

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path(), "7", "20");
    synth(b.path(), "7", "20");
    for f in ["train.json", "relations.txt", "lexicon.json", "run.toml", "synth_manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let data = json(a.path().join("train.json"));
    assert_eq!(data.as_array().unwrap().len(), 20);
    let manifest = json(a.path().join("synth_manifest.json"));
    assert_eq!(manifest["metadata"]["config_hash"].as_str().unwrap().len(), 16);
    assert!(manifest["metadata"]["format_version"].is_string());

    let empty = tempfile::tempdir().unwrap();
    synth(empty.path(), "7", "0");
    assert_eq!(json(empty.path().join("train.json")), Value::Array(vec![]));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "7", "20");
    let mut args = vec!["train", "--config", "run.toml"];
    args.extend(["--set", "encoder.d_h=32", "--set", "encoder.layers=1", "--set", "train.epochs=60"]);
    ok(&dre(d, &args));
    assert!(d.join("model.ckpt").exists());
    let log = json(d.join("train_log.json"));
    assert_eq!(log["epochs"].as_array().unwrap().len(), 60);
    let hash = log["metadata"]["config_hash"].as_str().unwrap().to_string();

    let table = ok(&dre(d, &["eval", "--config", "run.toml"]));
    assert!(table.contains(&format!("# train_config_hash: {hash}")), "{table}");
    assert!(table.contains("# fusion: adaptive-gate"));
    assert_eq!(table.matches("# fusion:").count(), 1);
    let report = json(d.join("eval_report.json"));
    assert_eq!(report["macro_f1"].as_f64().unwrap(), 1.0, "{table}");
    let rows = report["rows"].as_array().unwrap();
    let included = rows.iter().filter(|r| r["included"] == Value::Bool(true)).count();
    assert_eq!(included, 4);
    for r in rows.iter().filter(|r| r["included"] == Value::Bool(true)) {
        assert!(table.contains(r["relation"].as_str().unwrap()));
    }

    fs::write(d.join("fixture.json"), to_dialogre_json(&[engagement_dialogue()])).unwrap();
    ok(&dre(d, &["predict", "--config", "run.toml", "--input", "fixture.json"]));
    let preds = json(d.join("predictions.json"));
    let records = preds["predictions"].as_array().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["relation"], "per:girl/boyfriend");
    assert!(!records[0]["trigger_text"].as_str().unwrap().is_empty());
    let dist = records[0]["distribution"].as_array().unwrap();
    assert_eq!(dist.len(), 4);
    let total: f64 = dist.iter().map(|d| d["probability"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(preds["metadata"]["config_hash"].is_string());

    fs::write(d.join("empty.json"), "").unwrap();
    ok(&dre(d, &["predict", "--config", "run.toml", "--input", "empty.json"]));
    assert_eq!(json(d.join("predictions.json"))["predictions"], Value::Array(vec![]));

    fs::write(d.join("other.txt"), "per:alumni\nper:spouse\n").unwrap();
    let out = dre(d, &["eval", "--config", "run.toml", "--set", "paths.relations=other.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("differs from the checkpoint"));

    let bytes = fs::read(d.join("model.ckpt")).unwrap();
    fs::write(d.join("bad.ckpt"), &bytes[..bytes.len() / 2]).unwrap();
    let out = dre(d, &["predict", "--config", "run.toml", "--checkpoint", "bad.ckpt", "--input", "fixture.json"]);
    assert!(!out.status.success());
}

#[test]
fn default_config_trains() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "7", "20");
    ok(&dre(d, &["train", "--config", "run.toml"]));
    assert!(d.join("model.ckpt").exists());
    let report = json(d.join("ingest_report.json"));
    assert_eq!(report["ingest"]["aligned_triggers"], 20);
    assert_eq!(report["metadata"]["format_version"], "1");
}

#[test]
fn ablation_flags_reach_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "3", "8");
    let mut args = vec!["train", "--config", "run.toml", "--set", "ablation.disable_fusion=true"];
    args.extend(SMALL);
    ok(&dre(d, &args));
    let log = json(d.join("train_log.json"));
    assert_eq!(log["metadata"]["fusion"], "mean-pool");
    let table = ok(&dre(d, &["eval", "--config", "run.toml"]));
    assert!(table.contains("# fusion: mean-pool"), "{table}");

    let mut args = vec!["train", "--config", "run.toml", "--set", "ablation.disable_knowledge=true", "--set", "paths.lexicon=missing.json"];
    args.extend(SMALL);
    ok(&dre(d, &args));
    assert_eq!(json(d.join("train_log.json"))["metadata"]["knowledge"], "disabled");
}

#[test]
fn knowledge_without_lexicon_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "3", "8");
    fs::remove_file(d.join("lexicon.json")).unwrap();
    let out = dre(d, &["train", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lexicon"));

    let out = dre(d, &["train", "--set", "paths.train=train.json", "--set", "paths.relations=relations.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_k"));
}

#[test]
fn gradcheck_lists_every_group_once() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let table = ok(&dre(d, &["gradcheck", "--out", "."]));
    let report = json(d.join("gradcheck.json"));
    let groups: Vec<&str> = report["report"]["groups"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["group"].as_str().unwrap())
        .collect();
    assert_eq!(groups.len(), 5);
    for g in &groups {
        assert_eq!(groups.iter().filter(|h| h == &g).count(), 1);
    }
    assert!(!table.contains("FAIL"), "{table}");
    assert!(!table.contains("unused"), "{table}");

    let table = ok(&dre(d, &["gradcheck", "--out", ".", "--set", "ablation.disable_fusion=true"]));
    assert!(table.contains("unused"), "{table}");
}

#[test]
fn bad_arguments_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        vec!["train", "--set", "train.epoch=3"],
        vec!["train", "--set", "train.epochs"],
        vec!["eval", "--split", "holdout", "--set", "paths.test=x"],
        vec!["frobnicate"],
        vec!["train", "--config", "nope.toml"],
        vec!["predict", "--input", "nope.json"],
    ] {
        let out = dre(d, &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(dre(d, &["--help"]).status.code(), Some(0));
}
