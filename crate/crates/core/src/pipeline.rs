//! The six run steps shared by the CLI and the end-to-end tests.
//!
//! Every step reads its inputs from the config, rebuilds the cheap
//! deterministic pieces (vocabulary, split, graph) in memory and writes its
//! artifacts under `out_dir`. Re-running a step with the same config
//! rewrites the same bytes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{ContextKind, RunConfig};
use crate::corpus::{build_vocab, parse_labelled, parse_plain, split_documents, Lemmatizer, LabelledSentence, SenseId, Split, TokenStream, Vocabulary, WordId};
use crate::dictgraph::{build_graph, BuildReport, DictGraph, GraphSources, Inventory, WordVectors};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::scalar::Scalar;
use crate::senselm::{build_sense_stats, predict_senses, ContextEncoder, SenseHead, SenseResources, SenseStats};
use crate::standardlm::{topk_words, Backbone, InputTable, LmKind, LossTrace, SeqModel, SeqModelConfig, StandardLm};
use crate::tensor::{load_params, save_params, ParamStore};

/// File names inside `out_dir`.
pub mod files {
    pub const VOCAB: &str = "vocab.json";
    pub const GRAPH: &str = "graph.json";
    pub const GRAPH_REPORT: &str = "graph_report.json";
    pub const VECTORS: &str = "vectors.txt";
    pub const LM_PRETRAIN: &str = "lm.pretrain.ckpt.json";
    pub const LM: &str = "lm.ckpt.json";
    pub const SENSE: &str = "sense.ckpt.json";
    pub const CONTEXT: &str = "context.ckpt.json";
    pub const SENSE_STATS: &str = "sense_stats";
    pub const REPORT: &str = "report.json";
    pub const RUN_CONFIG: &str = "run_config.toml";
}

/// Log sink for progress lines.
pub type Log<'a> = &'a mut dyn FnMut(&str);

/// Inputs of a run after loading and encoding.
pub struct Workspace<T> {
    pub config: RunConfig,
    pub pretrain: Vec<Vec<String>>,
    pub labelled: Vec<LabelledSentence>,
    pub inventory: Inventory,
    pub lemmatizer: Lemmatizer,
    pub vocab: Vocabulary,
    pub split: Split,
    vectors: WordVectors<T>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl<T: Scalar> Workspace<T> {
    pub fn open(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let pretrain = parse_plain(&read(&config.pretrain)?)?;
        let labelled = parse_labelled(&read(&config.labelled)?)?;
        let inventory = Inventory::load(&config.inventory)?;
        let vectors = WordVectors::load(&config.vectors)?;
        Self::from_parts(config, pretrain, labelled, inventory, vectors)
    }

    pub fn from_parts(
        config: &RunConfig,
        pretrain: Vec<Vec<String>>,
        labelled: Vec<LabelledSentence>,
        inventory: Inventory,
        vectors: WordVectors<T>,
    ) -> Result<Self> {
        config.validate()?;
        let lemmatizer = inventory.lemmatizer();
        let vocab = build_vocab(&pretrain, &labelled, config.min_freq, &lemmatizer)?;
        let split = split_documents(&labelled, config.seed);
        Ok(Self {
            config: config.clone(),
            pretrain,
            labelled,
            inventory,
            lemmatizer,
            vocab,
            split,
            vectors,
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    /// Creates `out_dir` and records the full config there.
    fn ensure_out_dir(&self) -> Result<()> {
        let dir = &self.config.out_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&self.out(files::RUN_CONFIG), &self.config.to_toml()?)
    }

    pub fn train_stream(&self) -> Result<TokenStream> {
        self.vocab.encode_stream(&self.lemmatizer, &self.split.train)
    }

    pub fn valid_stream(&self) -> Result<TokenStream> {
        self.vocab.encode_stream(&self.lemmatizer, &self.split.valid)
    }

    pub fn test_stream(&self) -> Result<TokenStream> {
        self.vocab.encode_stream(&self.lemmatizer, &self.split.test)
    }

    /// Graph plus the vector store completed with every generated vector.
    pub fn graph(&self) -> Result<(DictGraph<T>, BuildReport, WordVectors<T>)> {
        let mut vectors = self.vectors.clone();
        let (graph, report) = build_graph(
            GraphSources {
                inventory: &self.inventory,
                vocab: &self.vocab,
            },
            &mut vectors,
            self.config.seed,
        )?;
        Ok((graph, report, vectors))
    }

    /// The graph when the config asks for one, and the word vectors the
    /// averaging context encoder reads.
    fn resources(&self) -> Result<(Option<Arc<DictGraph<T>>>, WordVectors<T>)> {
        if self.config.use_graph {
            let (g, _, v) = self.graph()?;
            Ok((Some(Arc::new(g)), v))
        } else {
            let mut v = self.vectors.clone();
            v.fill_missing(self.vocab.words().iter().map(|e| e.form.as_str()), self.config.seed);
            Ok((None, v))
        }
    }

    /// Averaging context encoder over the run's word vectors.
    pub fn average_encoder(&self) -> Result<ContextEncoder<T>> {
        let (_, vectors) = self.resources()?;
        ContextEncoder::average(&self.vocab, &vectors, self.config.context_len)
    }

    fn new_lm(&self, graph: &Option<Arc<DictGraph<T>>>) -> Result<StandardLm<T>> {
        StandardLm::new(&self.config.lm_config(), self.vocab.num_words(), graph.clone(), self.config.seed)
    }

    fn new_head(&self, graph: &Option<Arc<DictGraph<T>>>) -> Result<SenseHead<T>> {
        SenseHead::new(&self.config.sense_head_config(), &self.vocab, graph.clone(), self.config.seed + 1)
    }

    /// Word GRU whose top state is the recurrent local context.
    fn new_context_model(&self) -> Result<SeqModel<T>> {
        SeqModel::new(
            "context",
            SeqModelConfig {
                inputs: vec![InputTable {
                    rows: self.vocab.num_words(),
                    dim: self.config.embed_dim,
                }],
                backbone: Backbone::Gru {
                    layers: self.config.sense_layers,
                    hidden: self.config.sense_dim,
                },
                output: self.vocab.num_words(),
                graph_input: false,
                zero_output: false,
            },
            None,
            self.config.seed + 2,
        )
    }

    fn uses_recurrent_context(&self) -> bool {
        self.config.variant.needs_context() && self.config.context_encoder == ContextKind::Gru
    }
}

fn load_into(store: Option<&mut ParamStore<impl Scalar>>, path: &Path) -> Result<()> {
    if let Some(store) = store {
        if !path.exists() {
            return Err(Error::Checkpoint(format!("{} not found; run the earlier steps first", path.display())));
        }
        store.load_from(&load_params(path)?)?;
    }
    Ok(())
}

fn epoch_logger<'a>(log: &'a mut dyn FnMut(&str), what: &'a str) -> impl FnMut(usize, f64) + 'a {
    move |e, loss| log(&format!("{what} epoch {} loss {loss:.4} ppl {:.3}", e + 1, loss.exp()))
}

/// Writes `vocab.json`.
pub fn build_vocab_step<T: Scalar>(ws: &Workspace<T>, log: Log<'_>) -> Result<()> {
    ws.ensure_out_dir()?;
    write(&ws.out(files::VOCAB), &ws.vocab.to_json()?)?;
    log(&format!("vocabulary: {} words, {} senses", ws.vocab.num_words(), ws.vocab.num_senses()));
    Ok(())
}

/// Writes `graph.json`, `graph_report.json` and the completed `vectors.txt`.
pub fn build_graph_step<T: Scalar>(ws: &Workspace<T>, log: Log<'_>) -> Result<BuildReport> {
    ws.ensure_out_dir()?;
    let (graph, report, vectors) = ws.graph()?;
    graph.save(&ws.out(files::GRAPH))?;
    write(&ws.out(files::GRAPH_REPORT), &serde_json::to_string_pretty(&report)?)?;
    vectors.save(&ws.out(files::VECTORS))?;
    log(&format!(
        "graph: {} nodes, {} edges, largest area {}",
        report.nodes, report.edges, report.max_area_nodes
    ));
    Ok(report)
}

/// Trains the word model on the plain corpus; writes `lm.pretrain.ckpt.json`.
pub fn pretrain_step<T: Scalar>(ws: &Workspace<T>, log: Log<'_>) -> Result<LossTrace> {
    ws.ensure_out_dir()?;
    let (graph, _) = ws.resources()?;
    let mut lm = ws.new_lm(&graph)?;
    let words = ws.vocab.encode_plain(&ws.lemmatizer, &ws.pretrain);
    let trace = if words.len() > 1 {
        lm.fit(&words, &ws.config.train_config(ws.config.pretrain_epochs), epoch_logger(log, "pretrain"))?
    } else {
        LossTrace::default()
    };
    if let Some(p) = lm.params() {
        save_params(p, &ws.out(files::LM_PRETRAIN))?;
    }
    Ok(trace)
}

/// Loss traces of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub lm: LossTrace,
    pub sense: Option<LossTrace>,
    pub context: Option<LossTrace>,
}

/// Fine-tunes the word model on the training split, then fits whatever the
/// configured variant needs: the sense head, the recurrent context encoder
/// and the per-sense statistics. Runs pretraining first when its checkpoint
/// is missing.
pub fn train_step<T: Scalar>(ws: &Workspace<T>, log: Log<'_>) -> Result<TrainSummary> {
    ws.ensure_out_dir()?;
    let cfg = &ws.config;
    let (graph, vectors) = ws.resources()?;
    let stream = ws.train_stream()?;
    if stream.len() < 2 {
        return Err(Error::Empty("training split"));
    }

    let mut lm = ws.new_lm(&graph)?;
    if lm.params().is_some() {
        if !ws.out(files::LM_PRETRAIN).exists() {
            pretrain_step(ws, &mut *log)?;
        }
        load_into(lm.params_mut(), &ws.out(files::LM_PRETRAIN))?;
    }
    let mut summary = TrainSummary {
        lm: lm.fit(stream.words(), &cfg.train_config(cfg.epochs), epoch_logger(log, "lm"))?,
        ..Default::default()
    };
    if let Some(p) = lm.params() {
        save_params(p, &ws.out(files::LM))?;
    }

    if cfg.variant.needs_head() {
        let mut head = ws.new_head(&graph)?;
        summary.sense = Some(head.fit(&stream, &cfg.train_config(cfg.sense_epochs), epoch_logger(log, "sense"))?);
        save_params(head.params(), &ws.out(files::SENSE))?;
    }

    let encoder = if ws.uses_recurrent_context() {
        let mut model = ws.new_context_model()?;
        let (inputs, targets) = StandardLm::<T>::training_pairs(stream.words());
        summary.context = Some(crate::standardlm::train(
            &mut model,
            &inputs,
            &targets,
            &cfg.train_config(cfg.epochs),
            epoch_logger(log, "context"),
        )?);
        save_params(model.store(), &ws.out(files::CONTEXT))?;
        ContextEncoder::recurrent(model)?
    } else {
        ContextEncoder::average(&ws.vocab, &vectors, cfg.context_len)?
    };
    let stats = build_sense_stats(&stream, &encoder.contexts(stream.words())?, ws.vocab.num_words(), ws.vocab.num_senses())?;
    stats.save(&ws.out(files::SENSE_STATS))?;
    Ok(summary)
}

/// Trained models rebuilt from the checkpoints of [`train_step`].
pub struct Trained<T> {
    pub lm: StandardLm<T>,
    pub head: Option<SenseHead<T>>,
    pub encoder: Option<ContextEncoder<T>>,
    pub stats: SenseStats<T>,
}

impl<T> Trained<T> {
    pub fn resources<'a>(&'a self, vocab: &'a Vocabulary) -> SenseResources<'a, T> {
        SenseResources {
            vocab,
            stats: Some(&self.stats),
            head: self.head.as_ref(),
            encoder: self.encoder.as_ref(),
        }
    }
}

pub fn load_trained<T: Scalar>(ws: &Workspace<T>) -> Result<Trained<T>> {
    let cfg = &ws.config;
    let (graph, vectors) = ws.resources()?;
    let mut lm = ws.new_lm(&graph)?;
    load_into(lm.params_mut(), &ws.out(files::LM))?;
    let head = if cfg.variant.needs_head() {
        let mut head = ws.new_head(&graph)?;
        load_into(Some(head.params_mut()), &ws.out(files::SENSE))?;
        Some(head)
    } else {
        None
    };
    let encoder = if !cfg.variant.needs_context() {
        None
    } else if ws.uses_recurrent_context() {
        let mut model = ws.new_context_model()?;
        load_into(Some(model.store_mut()), &ws.out(files::CONTEXT))?;
        Some(ContextEncoder::recurrent(model)?)
    } else {
        Some(ContextEncoder::average(&ws.vocab, &vectors, cfg.context_len)?)
    };
    let base = ws.out(files::SENSE_STATS);
    if !base.with_extension("json").exists() {
        return Err(Error::Checkpoint("sense statistics not found; run train first".into()));
    }
    Ok(Trained {
        lm,
        head,
        encoder,
        stats: SenseStats::load(&base)?,
    })
}

/// Scores the configured variant on the test split; writes `report.json`.
pub fn evaluate_step<T: Scalar>(ws: &Workspace<T>, log: Log<'_>) -> Result<EvalReport> {
    ws.ensure_out_dir()?;
    let trained = load_trained(ws)?;
    let stream = ws.test_stream()?;
    if stream.len() < 2 {
        return Err(Error::Empty("test split"));
    }
    let word_steps = trained.lm.predict_stream(&stream)?;
    let sense_steps = predict_senses(ws.config.variant, ws.config.k, &word_steps, &stream, &trained.resources(&ws.vocab))?;
    let report = evaluate(ws.config.variant, &word_steps, &sense_steps, &stream, &ws.vocab, ws.config.echo())?;
    write(&ws.out(files::REPORT), &serde_json::to_string_pretty(&report)?)?;
    log(&crate::eval::render_table(std::slice::from_ref(&report)));
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub item: String,
    pub prob: f64,
}

/// One candidate next word with the scores of its own senses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordPrediction {
    pub word: String,
    pub prob: f64,
    pub senses: Vec<Ranked>,
}

/// Next word and next sense after a piece of text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Vocabulary forms the text was encoded to.
    pub tokens: Vec<String>,
    pub words: Vec<WordPrediction>,
    /// Sense the configured variant picks.
    pub sense: Ranked,
}

/// Sense assumed for a context word whose sense is not given: its most
/// frequent training sense, else its dummy, else its first sense.
fn assumed_sense(word: WordId, stats: &SenseStats<impl Scalar>, vocab: &Vocabulary) -> SenseId {
    stats
        .most_frequent(word)
        .or_else(|| vocab.dummy_of(word))
        .unwrap_or(vocab.senses_of(word)[0])
}

/// Predicts what follows `text`: the `top` best words, each with its senses
/// scored by the configured variant.
pub fn predict_step<T: Scalar>(ws: &Workspace<T>, text: &str, top: usize) -> Result<Prediction> {
    if ws.config.lm == LmKind::Gold {
        return Err(Error::Config("the gold model cannot predict unseen text".into()));
    }
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(Error::Empty("input text"));
    }
    let trained = load_trained(ws)?;
    let prefix = ws.vocab.encode_words(&ws.lemmatizer, &tokens);
    let next = trained.lm.next_after(&prefix)?;
    let ranked = topk_words(&next, top.max(1));

    // the sense scores at the last position depend only on the prefix, so
    // any placeholder for the next token will do
    let mut words = prefix.clone();
    words.push(ranked[0].0);
    let senses = words.iter().map(|&w| assumed_sense(w, &trained.stats, &ws.vocab)).collect();
    let stream = TokenStream::new(words, senses)?;
    let word_steps = trained.lm.predict_stream(&stream)?;
    let step = predict_senses(ws.config.variant, ws.config.k, &word_steps, &stream, &trained.resources(&ws.vocab))?
        .pop()
        .expect("non-empty prefix");

    let sense = |s: SenseId| Ranked {
        item: ws.vocab.sense(s).key.clone(),
        prob: step.probs[s.0].as_f64(),
    };
    let words = ranked
        .iter()
        .map(|&(w, p)| {
            let mut senses: Vec<Ranked> = ws.vocab.senses_of(w).iter().map(|&s| sense(s)).collect();
            senses.sort_by(|a, b| b.prob.total_cmp(&a.prob));
            WordPrediction {
                word: ws.vocab.word(w).form.clone(),
                prob: p.as_f64(),
                senses,
            }
        })
        .collect();
    Ok(Prediction {
        tokens: prefix.iter().map(|&w| ws.vocab.word(w).form.clone()).collect(),
        words,
        sense: sense(step.predicted),
    })
}
