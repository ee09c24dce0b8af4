use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tvsg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvsg")).current_dir(dir).env_remove("TVSG_DATA_DIR").args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tvsg(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_train_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--scenes", "40", "--seed", "3", "-o", "c.jsonl"]);
    let again = ok(d, &["synth", "--scenes", "40", "--seed", "3"]);
    assert_eq!(again, std::fs::read_to_string(d.join("c.jsonl")).unwrap());

    let counts: Value = serde_json::from_str(&ok(d, &["split", "--corpus", "c.jsonl", "--ratios", "0.7,0.3,0", "--out-dir", "sp"])).unwrap();
    assert_eq!(counts["train"].as_u64().unwrap() + counts["dev"].as_u64().unwrap(), 40);
    assert!(d.join("sp/train.jsonl.meta.json").exists());

    let log = ok(d, &["train", "--train", "sp/train.jsonl", "--dev", "sp/dev.jsonl", "--arch", "longformer-p", "--epochs", "2", "-o", "m.ckpt"]);
    assert!(log.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    ok(d, &["predict", "--model", "m.ckpt", "--corpus", "sp/dev.jsonl", "-o", "p.jsonl"]);

    let eval: Value = serde_json::from_str(&ok(d, &["eval", "--preds", "p.jsonl", "--gold", "sp/dev.jsonl", "--trials", "2000"])).unwrap();
    let acc = eval["instance_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!((eval["random_analytic"].as_f64().unwrap() - eval["random_simulated"].as_f64().unwrap()).abs() < 0.02);

    let table = ok(d, &["--format", "table", "breakdown", "--preds", "p.jsonl", "--axis", "speakers_per_scene"]);
    assert!(!table.trim().is_empty());
    let stats = ok(d, &["stats", "--corpus", "c.jsonl"]);
    assert!(serde_json::from_str::<Value>(&stats).is_ok());
    let hits = ok(d, &["retrieve", "--corpus", "c.jsonl", "--query", "5", "--k", "2"]);
    assert!(!hits.trim().is_empty());
}

#[test]
fn parse_then_anonymize() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("s01e01.txt"), "[Central Perk]\nRoss: Hi.\nRachel: Hey Ross.\n(Joey enters)\nJoey: How you doin?\n\n[Apartment]\nMonica: Clean.\nRoss: Sure.\n").unwrap();
    ok(d, &["parse", "--show", "friends", "s01e01.txt", "-o", "scenes.jsonl"]);
    let scenes = std::fs::read_to_string(d.join("scenes.jsonl")).unwrap();
    assert_eq!(scenes.lines().count(), 2);
    assert!(scenes.contains("s01e01"));
    ok(d, &["anonymize", "--scenes", "scenes.jsonl", "--seed", "1", "-o", "corpus.jsonl"]);
    let corpus = std::fs::read_to_string(d.join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 2);
    assert!(d.join("corpus.jsonl.meta.json").exists());
}

#[test]
fn data_dir_resolves_relative_paths() {
    let data = tempfile::tempdir().unwrap();
    let elsewhere = tempfile::tempdir().unwrap();
    ok(data.path(), &["synth", "--scenes", "40", "-o", "c.jsonl"]);
    let out = Command::new(env!("CARGO_BIN_EXE_tvsg"))
        .current_dir(elsewhere.path())
        .env("TVSG_DATA_DIR", data.path())
        .args(["stats", "--corpus", "c.jsonl"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(tvsg(d, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(tvsg(d, &["--help"]).status.code(), Some(0));
    let missing = tvsg(d, &["eval", "--preds", "nope.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.jsonl"));
    std::fs::write(d.join("bad.jsonl"), "{not json\n").unwrap();
    assert_eq!(tvsg(d, &["stats", "--corpus", "bad.jsonl"]).status.code(), Some(1));
}
