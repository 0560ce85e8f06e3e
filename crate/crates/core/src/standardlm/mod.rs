//! Next-word prediction: a stacked GRU or causal transformer over word
//! embeddings (optionally joined with the graph signal), and a gold oracle
//! that always predicts the true next word.

mod seq;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use seq::{Backbone, InputTable, SeqInputs, SeqModel, SeqModelConfig, StepState};
pub use train::{train, LossTrace, TrainConfig};

use crate::corpus::{TokenStream, WordId};
use crate::dictgraph::DictGraph;
use crate::error::{Error, Result};
use crate::nn::TransformerConfig;
use crate::scalar::Scalar;
use crate::tensor::ParamStore;

/// Distribution over the word vocabulary at one position.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionStep<T> {
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> PredictionStep<T> {
    pub fn from_logits(logits: Vec<T>) -> Self {
        let probs = softmax(&logits);
        Self { logits, probs }
    }

    /// Probability 1 on `target`; logits are 0 there and -inf elsewhere.
    pub fn one_hot(size: usize, target: usize) -> Self {
        let mut logits = vec![T::neg_infinity(); size];
        let mut probs = vec![T::zero(); size];
        logits[target] = T::zero();
        probs[target] = T::one();
        Self { logits, probs }
    }

    pub fn argmax(&self) -> usize {
        topk(&self.probs, 1)[0].0
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Indices of the `k` largest values, descending, ties by ascending index.
/// `k` is clamped to the length.
pub fn topk<T: Scalar>(values: &[T], k: usize) -> Vec<(usize, T)> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.into_iter().take(k).map(|i| (i, values[i])).collect()
}

/// The `k` most likely words of a step.
pub fn topk_words<T: Scalar>(step: &PredictionStep<T>, k: usize) -> Vec<(WordId, T)> {
    topk(&step.probs, k).into_iter().map(|(i, p)| (WordId(i), p)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LmKind {
    Gru,
    Transformer,
    Gold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub kind: LmKind,
    pub layers: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub context: usize,
    pub use_graph: bool,
    pub zero_output: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            kind: LmKind::Gru,
            layers: 3,
            hidden: 512,
            embed_dim: 300,
            heads: 4,
            ff_dim: 1024,
            context: 128,
            use_graph: false,
            zero_output: false,
        }
    }
}

impl LmConfig {
    pub fn backbone(&self) -> Backbone {
        match self.kind {
            LmKind::Transformer => Backbone::Transformer(TransformerConfig {
                d_model: self.hidden,
                layers: self.layers,
                heads: self.heads,
                ff_dim: self.ff_dim,
                context: self.context,
            }),
            _ => Backbone::Gru {
                layers: self.layers,
                hidden: self.hidden,
            },
        }
    }
}

/// Word-level language model.
#[derive(Clone, Debug)]
pub enum StandardLm<T> {
    Neural(SeqModel<T>),
    /// Oracle over a vocabulary of the given size.
    Gold(usize),
}

impl<T: Scalar> StandardLm<T> {
    pub fn new(config: &LmConfig, vocab_size: usize, graph: Option<Arc<DictGraph<T>>>, seed: u64) -> Result<Self> {
        if config.kind == LmKind::Gold {
            return Ok(Self::Gold(vocab_size));
        }
        let model = SeqModel::new(
            "lm",
            SeqModelConfig {
                inputs: vec![InputTable {
                    rows: vocab_size,
                    dim: config.embed_dim,
                }],
                backbone: config.backbone(),
                output: vocab_size,
                graph_input: config.use_graph,
                zero_output: config.zero_output,
            },
            graph,
            seed,
        )?;
        Ok(Self::Neural(model))
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Self::Neural(m) => m.output(),
            Self::Gold(v) => *v,
        }
    }

    pub fn params(&self) -> Option<&ParamStore<T>> {
        match self {
            Self::Neural(m) => Some(m.store()),
            Self::Gold(_) => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParamStore<T>> {
        match self {
            Self::Neural(m) => Some(m.store_mut()),
            Self::Gold(_) => None,
        }
    }

    /// Inputs and next-word targets of a stream: position `t` predicts
    /// token `t + 1`.
    pub fn training_pairs(words: &[WordId]) -> (SeqInputs, Vec<usize>) {
        let n = words.len().saturating_sub(1);
        let inputs = SeqInputs {
            streams: vec![words[..n].iter().map(|w| w.0).collect()],
            words: words[..n].to_vec(),
        };
        (inputs, words[1..].iter().map(|w| w.0).collect())
    }

    /// Next-word distributions for positions `0..n-1` of `words`: entry `t`
    /// predicts `words[t + 1]`. The gold model reads the answer from
    /// `words` itself.
    pub fn predict(&self, words: &[WordId]) -> Result<Vec<PredictionStep<T>>> {
        let v = self.vocab_size();
        if let Some(bad) = words.iter().find(|w| w.0 >= v) {
            return Err(Error::OutOfRange {
                what: "word id",
                id: bad.0,
                size: v,
            });
        }
        match self {
            Self::Gold(_) => Ok(words.iter().skip(1).map(|w| PredictionStep::one_hot(v, w.0)).collect()),
            Self::Neural(m) => {
                let (inputs, _) = Self::training_pairs(words);
                if inputs.is_empty() {
                    return Ok(Vec::new());
                }
                Ok(m.predict_logits(&inputs)?.into_iter().map(PredictionStep::from_logits).collect())
            }
        }
    }

    pub fn predict_stream(&self, stream: &TokenStream) -> Result<Vec<PredictionStep<T>>> {
        self.predict(stream.words())
    }

    /// Trains on a word stream; the gold model has nothing to learn.
    pub fn fit(&mut self, words: &[WordId], config: &TrainConfig, on_epoch: impl FnMut(usize, f64)) -> Result<LossTrace> {
        match self {
            Self::Gold(_) => Ok(LossTrace::default()),
            Self::Neural(m) => {
                let (inputs, targets) = Self::training_pairs(words);
                train(m, &inputs, &targets, config, on_epoch)
            }
        }
    }

    /// Distribution after consuming `prefix` (for interactive prediction).
    pub fn next_after(&self, prefix: &[WordId]) -> Result<PredictionStep<T>> {
        match self {
            Self::Gold(_) => Err(Error::Config("the gold model needs the true continuation".into())),
            Self::Neural(m) => {
                if prefix.is_empty() {
                    return Err(Error::Empty("prefix"));
                }
                let inputs = SeqInputs {
                    streams: vec![prefix.iter().map(|w| w.0).collect()],
                    words: prefix.to_vec(),
                };
                let logits = m.predict_logits(&inputs)?;
                Ok(PredictionStep::from_logits(logits.last().expect("non-empty prefix").clone()))
            }
        }
    }

    pub fn load_params(&mut self, store: &ParamStore<T>) -> Result<()> {
        match self.params_mut() {
            Some(p) => p.load_from(store),
            None => Ok(()),
        }
    }
}

/// Log-probability table helper: `probs[t][targets[t]]` for each step.
pub fn target_probs<T: Scalar>(steps: &[PredictionStep<T>], targets: &[usize]) -> Result<Vec<T>> {
    if steps.len() != targets.len() {
        return Err(Error::Length(format!("{} steps for {} targets", steps.len(), targets.len())));
    }
    Ok(steps.iter().zip(targets).map(|(s, &t)| s.probs[t]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_breaks_ties_by_lower_id() {
        let v = [0.2, 0.3, 0.3, 0.2];
        let got: Vec<usize> = topk(&v, 4).into_iter().map(|x| x.0).collect();
        assert_eq!(got, vec![1, 2, 0, 3]);
    }

    #[test]
    fn gold_predicts_next_word() {
        let lm = StandardLm::<f64>::Gold(5);
        let steps = lm.predict(&[WordId(2), WordId(4), WordId(1)]).unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(topk_words(&steps[0], 1)[0].0, WordId(4));
        assert_eq!(steps[1].argmax(), 1);
    }

    #[test]
    fn full_topk_is_descending() {
        let step = PredictionStep::from_logits(vec![0.1, 2.0, -1.0, 0.5]);
        let all = topk_words(&step, 4);
        assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
        let s: f64 = step.probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
