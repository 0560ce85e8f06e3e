//! Next-sense prediction: dense heads over the whole sense vocabulary and
//! the localized variants that only score senses of the top-K predicted
//! words.

mod stats;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use stats::{build_sense_stats, ContextEncoder, SenseStats};

use crate::corpus::{SenseId, TokenStream, Vocabulary, WordId};
use crate::dictgraph::DictGraph;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::standardlm::{
    softmax, topk, topk_words, train, Backbone, InputTable, LossTrace, PredictionStep, SeqInputs, SeqModel, SeqModelConfig,
    TrainConfig,
};
use crate::tensor::ParamStore;

/// Probability given to every sense outside the candidate set.
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SenseVariant {
    Mfs,
    #[serde(rename = "selectk")]
    SelectK,
    #[serde(rename = "sensecontext")]
    SenseContext,
    #[serde(rename = "selfattn")]
    SelfAttention,
    DenseGru,
    DenseTransformer,
}

impl SenseVariant {
    pub const ALL: [SenseVariant; 6] = [
        Self::Mfs,
        Self::SelectK,
        Self::SenseContext,
        Self::SelfAttention,
        Self::DenseGru,
        Self::DenseTransformer,
    ];

    /// Variants restricted to the senses of the top-K words.
    pub fn takes_k(self) -> bool {
        matches!(self, Self::SelectK | Self::SenseContext | Self::SelfAttention)
    }

    pub fn is_localized(self) -> bool {
        self.takes_k() || self == Self::Mfs
    }

    pub fn is_dense(self) -> bool {
        matches!(self, Self::DenseGru | Self::DenseTransformer)
    }

    pub fn needs_head(self) -> bool {
        self == Self::SelectK || self.is_dense()
    }

    pub fn needs_context(self) -> bool {
        matches!(self, Self::SenseContext | Self::SelfAttention)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mfs => "mfs",
            Self::SelectK => "selectk",
            Self::SenseContext => "sensecontext",
            Self::SelfAttention => "selfattn",
            Self::DenseGru => "dense-gru",
            Self::DenseTransformer => "dense-transformer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sense variant `{s}`")))
    }
}

/// Distribution over the sense vocabulary at one position.
#[derive(Clone, Debug, PartialEq)]
pub struct SenseStep<T> {
    pub probs: Vec<T>,
    /// Ascending; empty for dense variants.
    pub candidates: Vec<SenseId>,
    pub predicted: SenseId,
}

/// Senses of the `k` most likely words, ascending.
pub fn candidate_set<T: Scalar>(step: &PredictionStep<T>, k: usize, vocab: &Vocabulary) -> Result<Vec<SenseId>> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let set: BTreeSet<SenseId> = topk_words(step, k)
        .into_iter()
        .flat_map(|(w, _)| vocab.senses_of(w).iter().copied())
        .collect();
    Ok(set.into_iter().collect())
}

/// Puts `scores` (already normalised over `candidates`) on the candidates
/// and ε everywhere else; the argmax is taken over candidates only.
fn localized<T: Scalar>(candidates: Vec<SenseId>, scores: &[T], num_senses: usize) -> SenseStep<T> {
    debug_assert_eq!(candidates.len(), scores.len());
    let mut probs = vec![T::lit(EPSILON); num_senses];
    for (s, &p) in candidates.iter().zip(scores) {
        probs[s.0] = p;
    }
    let best = topk(scores, 1)[0].0;
    SenseStep {
        predicted: candidates[best],
        probs,
        candidates,
    }
}

/// Most frequent training sense of the top-1 word, with probability
/// `1 - ε(M-1)`. Unseen words fall back to their dummy sense, or their
/// lowest sense id.
pub fn mfs_predict<T: Scalar>(step: &PredictionStep<T>, stats: &SenseStats<T>, vocab: &Vocabulary) -> SenseStep<T> {
    let word = topk_words(step, 1)[0].0;
    let chosen = stats
        .most_frequent(word)
        .or_else(|| vocab.dummy_of(word))
        .unwrap_or(vocab.senses_of(word)[0]);
    let m = vocab.num_senses();
    let mut probs = vec![T::lit(EPSILON); m];
    probs[chosen.0] = T::one() - T::lit(EPSILON * (m as f64 - 1.0));
    SenseStep {
        probs,
        candidates: vec![chosen],
        predicted: chosen,
    }
}

/// Softmax of the sense head's logits restricted to the candidates.
pub fn selectk_predict<T: Scalar>(step: &PredictionStep<T>, k: usize, logits: &[T], vocab: &Vocabulary) -> Result<SenseStep<T>> {
    check_width(logits.len(), vocab)?;
    let candidates = candidate_set(step, k, vocab)?;
    let sel: Vec<T> = candidates.iter().map(|s| logits[s.0]).collect();
    Ok(localized(candidates, &softmax(&sel), vocab.num_senses()))
}

fn check_width(n: usize, vocab: &Vocabulary) -> Result<()> {
    if n != vocab.num_senses() {
        return Err(Error::shape("sense scores", format!("{n} scores for {} senses", vocab.num_senses())));
    }
    Ok(())
}

fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        T::zero()
    } else {
        dot / (na * nb)
    }
}

fn check_context<T: Scalar>(context: &[T], stats: &SenseStats<T>) -> Result<()> {
    if context.len() != stats.dim() {
        return Err(Error::shape(
            "local context",
            format!("width {}, sense contexts have {}", context.len(), stats.dim()),
        ));
    }
    Ok(())
}

/// Candidates scored by the softmax of cosine(context, SC(s)); a sense
/// without SC scores cosine −1.
pub fn sense_context_predict<T: Scalar>(
    step: &PredictionStep<T>,
    k: usize,
    context: &[T],
    stats: &SenseStats<T>,
    vocab: &Vocabulary,
) -> Result<SenseStep<T>> {
    check_context(context, stats)?;
    let candidates = candidate_set(step, k, vocab)?;
    let sims: Vec<T> = candidates
        .iter()
        .map(|&s| stats.context(s).map_or(-T::one(), |sc| cosine(context, sc)))
        .collect();
    Ok(localized(candidates, &softmax(&sims), vocab.num_senses()))
}

/// Candidates scored by scaled dot-product attention: every query row is
/// the local context and the keys are the candidates' SC vectors, so each
/// row of `softmax(Q Cᵀ / √d)` is the same distribution. A sense without
/// SC uses the key `−context`.
pub fn self_attention_predict<T: Scalar>(
    step: &PredictionStep<T>,
    k: usize,
    context: &[T],
    stats: &SenseStats<T>,
    vocab: &Vocabulary,
) -> Result<SenseStep<T>> {
    check_context(context, stats)?;
    let candidates = candidate_set(step, k, vocab)?;
    let scale = T::lit(context.len().max(1) as f64).sqrt();
    let logits: Vec<T> = candidates
        .iter()
        .map(|&s| {
            let dot = match stats.context(s) {
                Some(key) => context.iter().zip(key).map(|(&q, &c)| q * c).sum::<T>(),
                None => -context.iter().map(|&q| q * q).sum::<T>(),
            };
            dot / scale
        })
        .collect();
    Ok(localized(candidates, &softmax(&logits), vocab.num_senses()))
}

/// Full softmax over the sense vocabulary.
pub fn dense_predict<T: Scalar>(logits: Vec<T>) -> SenseStep<T> {
    let probs = softmax(&logits);
    let predicted = SenseId(topk(&probs, 1)[0].0);
    SenseStep {
        probs,
        candidates: Vec::new(),
        predicted,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SenseHeadConfig {
    pub backbone: Backbone,
    pub word_dim: usize,
    pub sense_dim: usize,
    pub use_graph: bool,
    pub zero_output: bool,
}

/// Sequence model over `(word, sense)` inputs predicting the next sense.
#[derive(Clone, Debug)]
pub struct SenseHead<T> {
    model: SeqModel<T>,
}

impl<T: Scalar> SenseHead<T> {
    pub fn new(config: &SenseHeadConfig, vocab: &Vocabulary, graph: Option<Arc<DictGraph<T>>>, seed: u64) -> Result<Self> {
        let model = SeqModel::new(
            "sense",
            SeqModelConfig {
                inputs: vec![
                    InputTable {
                        rows: vocab.num_words(),
                        dim: config.word_dim,
                    },
                    InputTable {
                        rows: vocab.num_senses(),
                        dim: config.sense_dim,
                    },
                ],
                backbone: config.backbone,
                output: vocab.num_senses(),
                graph_input: config.use_graph,
                zero_output: config.zero_output,
            },
            graph,
            seed,
        )?;
        Ok(Self { model })
    }

    pub fn model(&self) -> &SeqModel<T> {
        &self.model
    }

    pub fn params(&self) -> &ParamStore<T> {
        self.model.store()
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        self.model.store_mut()
    }

    /// Inputs `(w_t, s_t)` and targets `s_{t+1}`.
    pub fn training_pairs(stream: &TokenStream) -> (SeqInputs, Vec<usize>) {
        let n = stream.len().saturating_sub(1);
        let inputs = SeqInputs {
            streams: vec![
                stream.words()[..n].iter().map(|w| w.0).collect(),
                stream.senses()[..n].iter().map(|s| s.0).collect(),
            ],
            words: stream.words()[..n].to_vec(),
        };
        (inputs, stream.senses().iter().skip(1).map(|s| s.0).collect())
    }

    pub fn fit(&mut self, stream: &TokenStream, config: &TrainConfig, on_epoch: impl FnMut(usize, f64)) -> Result<LossTrace> {
        let (inputs, targets) = Self::training_pairs(stream);
        train(&mut self.model, &inputs, &targets, config, on_epoch)
    }

    /// Logits at positions `0..n-1` with the true senses as input.
    pub fn teacher_forced_logits(&self, stream: &TokenStream) -> Result<Vec<Vec<T>>> {
        let (inputs, _) = Self::training_pairs(stream);
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        self.model.predict_logits(&inputs)
    }
}

/// Everything a variant may need besides the word predictions.
pub struct SenseResources<'a, T> {
    pub vocab: &'a Vocabulary,
    pub stats: Option<&'a SenseStats<T>>,
    pub head: Option<&'a SenseHead<T>>,
    pub encoder: Option<&'a ContextEncoder<T>>,
}

/// Sense predictions for positions `1..n` of `stream`, given the word
/// predictions `word_steps[t]` for token `t + 1`.
///
/// Dense heads read the true previous senses. SelectK feeds its own
/// previous prediction back into the head.
pub fn predict_senses<T: Scalar>(
    variant: SenseVariant,
    k: Option<usize>,
    word_steps: &[PredictionStep<T>],
    stream: &TokenStream,
    res: &SenseResources<'_, T>,
) -> Result<Vec<SenseStep<T>>> {
    let n = stream.len().saturating_sub(1);
    if word_steps.len() != n {
        return Err(Error::Length(format!("{} word steps for {} positions", word_steps.len(), n)));
    }
    let need_k = || k.ok_or_else(|| Error::Config(format!("variant {} needs K", variant.name())));
    let need_stats = || res.stats.ok_or_else(|| Error::Config(format!("variant {} needs sense statistics", variant.name())));
    let need_head = || res.head.ok_or_else(|| Error::Config(format!("variant {} needs a trained sense head", variant.name())));
    let vocab = res.vocab;
    match variant {
        SenseVariant::Mfs => {
            let stats = need_stats()?;
            Ok(word_steps.iter().map(|s| mfs_predict(s, stats, vocab)).collect())
        }
        SenseVariant::SelectK => {
            let (k, head) = (need_k()?, need_head()?);
            let mut state = head.model.start();
            let mut prev = stream.senses().first().copied();
            let mut out = Vec::with_capacity(n);
            for (t, step) in word_steps.iter().enumerate() {
                let logits = head.model.step(&mut state, &[stream.words()[t].0, prev.expect("n > 0").0], stream.words()[t])?;
                let s = selectk_predict(step, k, &logits, vocab)?;
                prev = Some(s.predicted);
                out.push(s);
            }
            Ok(out)
        }
        SenseVariant::SenseContext | SenseVariant::SelfAttention => {
            let (k, stats) = (need_k()?, need_stats()?);
            let enc = res
                .encoder
                .ok_or_else(|| Error::Config(format!("variant {} needs a context encoder", variant.name())))?;
            let ctx = enc.contexts(stream.words())?;
            word_steps
                .iter()
                .enumerate()
                .map(|(t, step)| {
                    if variant == SenseVariant::SenseContext {
                        sense_context_predict(step, k, &ctx[t + 1], stats, vocab)
                    } else {
                        self_attention_predict(step, k, &ctx[t + 1], stats, vocab)
                    }
                })
                .collect()
        }
        SenseVariant::DenseGru | SenseVariant::DenseTransformer => {
            let head = need_head()?;
            head.teacher_forced_logits(stream)?
                .into_iter()
                .map(|l| {
                    check_width(l.len(), vocab)?;
                    Ok(dense_predict(l))
                })
                .collect()
        }
    }
}

/// Local-context helper for callers outside [`predict_senses`].
pub fn context_before<T: Scalar>(encoder: &ContextEncoder<T>, words: &[WordId]) -> Result<Vec<T>> {
    let mut all = words.to_vec();
    all.push(WordId(0));
    Ok(encoder.contexts(&all)?.pop().expect("non-empty"))
}
