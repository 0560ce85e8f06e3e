use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multisense")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Toy data plus a config with the given lines replacing the toy ones.
fn config(dir: &Path, overrides: &[(&str, &str)]) -> String {
    multisense::toy::write_to(dir).unwrap();
    let mut text = multisense::toy::CONFIG.to_string();
    for (key, value) in overrides {
        let line = text.lines().find(|l| l.starts_with(&format!("{key} ="))).unwrap().to_string();
        text = text.replace(&line, &format!("{key} = {value}"));
    }
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const FAST: &[(&str, &str)] = &[("pretrain_epochs", "1"), ("epochs", "2"), ("sense_epochs", "2"), ("layers", "1"), ("sense_layers", "1")];

#[test]
fn build_vocab_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let args = ["build-vocab", "--toy", "--out-dir", out.to_str().unwrap()];
    ok(&cli(&args, dir.path()));
    let first = std::fs::read(out.join("vocab.json")).unwrap();
    ok(&cli(&args, dir.path()));
    assert_eq!(first, std::fs::read(out.join("vocab.json")).unwrap());
}

#[test]
fn build_graph_writes_dump_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&cli(&["build-graph", "--toy", "--out-dir", "o"], dir.path()));
    assert!(stdout.trim().ends_with("graph.json"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("o/graph_report.json")).unwrap()).unwrap();
    assert!(report["max_area_nodes"].as_u64().unwrap() <= 32);
}

#[test]
fn gold_mfs_evaluation_has_perfect_globals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[("lm", "\"gold\"")]);
    ok(&cli(&["train", "--config", &cfg, "--variant", "mfs"], dir.path()));
    let table = ok(&cli(&["evaluate", "--config", &cfg, "--variant", "mfs"], dir.path()));
    assert!(table.starts_with("Method"));
    assert!(table.lines().nth(1).unwrap().starts_with("mfs"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["globals_acc"]["value"], 1.0);
    assert_eq!(report["config"]["lm"], "gold");
}

#[test]
fn train_and_predict_on_the_toy_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = FAST.to_vec();
    o.push(("variant", "\"selectk\""));
    let cfg = config(dir.path(), &o);
    let flags = ["--config", cfg.as_str(), "--k", "2"];
    let mut train = vec!["train"];
    train.extend(flags);
    ok(&cli(&train, dir.path()));
    let mut predict = vec!["predict", "--text", "John sat on the bank of the river and watched the", "--top", "3"];
    predict.extend(flags);
    let p: serde_json::Value = serde_json::from_str(&ok(&cli(&predict, dir.path()))).unwrap();
    assert_eq!(p["words"].as_array().unwrap().len(), 3);
    for w in p["words"].as_array().unwrap() {
        assert!(w["word"].is_string() && w["prob"].is_number());
        assert!(!w["senses"].as_array().unwrap().is_empty());
    }
    assert!(p["sense"]["item"].is_string());
}

#[test]
fn invalid_config_fails_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["train", "--toy", "--variant", "selfattn", "--k", "0"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
}

#[test]
fn k_for_a_dense_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["evaluate", "--toy", "--variant", "dense-gru", "--k", "3"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("does not take K"));
}

#[test]
fn missing_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    std::fs::remove_file(dir.path().join("inventory.json")).unwrap();
    let out = cli(&["build-vocab", "--config", &cfg], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("inventory.json"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "sead = 4\n").unwrap();
    let out = cli(&["build-vocab", "--config", path.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("sead"));
}
