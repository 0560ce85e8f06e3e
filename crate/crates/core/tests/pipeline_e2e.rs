mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::{toy_config, toy_workspace};
use multisense::config::RunConfig;
use multisense::pipeline::{self, files};
use multisense::senselm::SenseVariant;
use multisense::standardlm::LmKind;

fn quick(cfg: &mut RunConfig) {
    cfg.pretrain_epochs = 2;
    cfg.epochs = 3;
    cfg.sense_epochs = 3;
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn run_all(cfg: &RunConfig) {
    let ws = toy_workspace(cfg);
    let mut log = |_: &str| {};
    pipeline::build_vocab_step(&ws, &mut log).unwrap();
    pipeline::build_graph_step(&ws, &mut log).unwrap();
    pipeline::pretrain_step(&ws, &mut log).unwrap();
    pipeline::train_step(&ws, &mut log).unwrap();
    pipeline::evaluate_step(&ws, &mut log).unwrap();
}

#[test]
fn every_step_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.variant = SenseVariant::SelectK;
    cfg.k = Some(1);
    quick(&mut cfg);
    run_all(&cfg);
    let first = snapshot(dir.path());
    run_all(&cfg);
    assert_eq!(first, snapshot(dir.path()));
    for name in [files::VOCAB, files::GRAPH, files::LM, files::SENSE, files::REPORT, "sense_stats.bin"] {
        assert!(first.contains_key(name), "{name} missing");
    }
}

#[test]
fn two_runs_write_identical_checkpoints() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let mut cfg = toy_config(dir.path());
        cfg.variant = SenseVariant::DenseGru;
        cfg.k = None;
        quick(&mut cfg);
        let ws = toy_workspace(&cfg);
        pipeline::train_step(&ws, &mut |_| {}).unwrap();
    }
    for name in [files::LM_PRETRAIN, files::LM, files::SENSE] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn without_graph_no_graph_is_built_or_used() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.use_graph = false;
    cfg.variant = SenseVariant::SelectK;
    cfg.k = Some(2);
    quick(&mut cfg);
    let ws = toy_workspace(&cfg);
    pipeline::train_step(&ws, &mut |_| {}).unwrap();
    pipeline::evaluate_step(&ws, &mut |_| {}).unwrap();
    assert!(!dir.path().join(files::GRAPH).exists());
    let trained = pipeline::load_trained(&ws).unwrap();
    assert!(trained.lm.params().unwrap().names().all(|n| !n.contains("gat")));
    assert!(trained.head.unwrap().params().names().all(|n| !n.contains("gat")));
}

#[test]
fn graph_run_trains_gat_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.use_graph = true;
    cfg.variant = SenseVariant::DenseGru;
    cfg.k = None;
    cfg.layers = 1;
    cfg.sense_layers = 1;
    quick(&mut cfg);
    let ws = toy_workspace(&cfg);
    pipeline::train_step(&ws, &mut |_| {}).unwrap();
    let report = pipeline::evaluate_step(&ws, &mut |_| {}).unwrap();
    assert!(report.word_ppl.is_finite() && report.sense_ppl.value.is_finite());
    let trained = pipeline::load_trained(&ws).unwrap();
    // a graph model cannot be built without its graph
    assert!(multisense::StandardLm::new(&cfg.lm_config(), ws.vocab.num_words(), None, cfg.seed).is_err());
    let names: Vec<&str> = trained.lm.params().unwrap().names().collect();
    assert!(names.iter().any(|n| n.contains("gat")), "{names:?}");
}

#[test]
fn predict_reports_words_and_senses() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.variant = SenseVariant::SelectK;
    cfg.k = Some(1);
    quick(&mut cfg);
    let ws = toy_workspace(&cfg);
    pipeline::train_step(&ws, &mut |_| {}).unwrap();
    let p = pipeline::predict_step(&ws, "John sat on the bank of the river and watched the", 5).unwrap();
    assert_eq!(p.tokens.len(), 11);
    assert_eq!(p.tokens[4], "bank");
    assert_eq!(p.words.len(), 5);
    assert!(p.words.windows(2).all(|w| w[0].prob >= w[1].prob));
    for w in &p.words {
        let id = ws.vocab.word_id(&w.word).unwrap();
        assert_eq!(w.senses.len(), ws.vocab.senses_of(id).len());
    }
    // K = 1: the chosen sense belongs to the best word and carries its mass
    assert!(p.words[0].senses.iter().any(|s| s.item == p.sense.item));
    let mass: f64 = p.words[0].senses.iter().map(|s| s.prob).sum();
    assert!((mass - 1.0).abs() < 1e-9);
}

#[test]
fn gold_model_cannot_predict_free_text() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.lm = LmKind::Gold;
    let ws = toy_workspace(&cfg);
    assert!(pipeline::predict_step(&ws, "the bank", 3).is_err());
}

#[test]
fn evaluate_before_train_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let ws = toy_workspace(&toy_config(dir.path()));
    let err = pipeline::evaluate_step(&ws, &mut |_| {}).unwrap_err().to_string();
    assert!(err.contains(files::LM), "{err}");
}

#[test]
fn loss_falls_over_the_first_five_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.variant = SenseVariant::DenseGru;
    cfg.k = None;
    cfg.pretrain_epochs = 0;
    cfg.epochs = 5;
    cfg.sense_epochs = 5;
    let ws = toy_workspace(&cfg);
    let s = pipeline::train_step(&ws, &mut |_| {}).unwrap();
    for trace in [&s.lm, s.sense.as_ref().unwrap()] {
        assert_eq!(trace.epoch_loss.len(), 5);
        assert!(trace.epoch_loss.windows(2).all(|w| w[1] < w[0]), "{:?}", trace.epoch_loss);
    }
}

#[test]
fn recurrent_context_encoder_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.variant = SenseVariant::SenseContext;
    cfg.k = Some(3);
    cfg.context_encoder = multisense::config::ContextKind::Gru;
    quick(&mut cfg);
    let ws = toy_workspace(&cfg);
    pipeline::train_step(&ws, &mut |_| {}).unwrap();
    assert!(dir.path().join(files::CONTEXT).exists());
    let a = pipeline::evaluate_step(&ws, &mut |_| {}).unwrap();
    let b = pipeline::evaluate_step(&ws, &mut |_| {}).unwrap();
    assert_eq!(a, b);
}

#[test]
fn transformer_word_model_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.lm = LmKind::Transformer;
    cfg.layers = 1;
    cfg.variant = SenseVariant::DenseTransformer;
    cfg.k = None;
    cfg.sense_layers = 1;
    cfg.context = 16;
    quick(&mut cfg);
    let ws = toy_workspace(&cfg);
    pipeline::train_step(&ws, &mut |_| {}).unwrap();
    let r = pipeline::evaluate_step(&ws, &mut |_| {}).unwrap();
    assert!(r.word_ppl.is_finite());
    assert!(r.sense_ppl.significant);
}
