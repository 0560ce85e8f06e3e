use serde::{Deserialize, Serialize};

use super::seq::{SeqInputs, SeqModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Adam, AdamConfig, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Truncated-BPTT chunk for the GRU; window length for the transformer
    /// (capped at its context).
    pub bptt: usize,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip: f64,
    /// Stop after the first epoch whose training perplexity is below this.
    #[serde(default)]
    pub stop_below_ppl: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            bptt: 35,
            clip: 5.0,
            stop_below_ppl: None,
        }
    }
}

/// Mean per-token training loss of every epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epoch_loss: Vec<f64>,
}

impl LossTrace {
    pub fn last(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }

    /// Training perplexity of the last epoch.
    pub fn last_perplexity(&self) -> Option<f64> {
        self.last().map(f64::exp)
    }
}

/// Trains `model` to predict `targets[t]` at position `t` of `inputs` with
/// full-softmax cross-entropy and Adam. Chunks are visited in stream order;
/// the GRU state is carried across chunks without gradient.
pub fn train<T: Scalar>(
    model: &mut SeqModel<T>,
    inputs: &SeqInputs,
    targets: &[usize],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<LossTrace> {
    model.check_inputs(inputs)?;
    if targets.len() != inputs.len() {
        return Err(Error::Length(format!("{} targets for {} positions", targets.len(), inputs.len())));
    }
    if inputs.is_empty() {
        return Err(Error::Empty("training stream"));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= model.output()) {
        return Err(Error::OutOfRange {
            what: "target id",
            id: bad,
            size: model.output(),
        });
    }
    if config.bptt == 0 {
        return Err(Error::Config("bptt must be positive".into()));
    }
    let chunk = model.context().map_or(config.bptt, |c| c.min(config.bptt));
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut trace = LossTrace::default();
    let tape = Tape::new();
    for epoch in 0..config.epochs {
        let mut state: Option<Vec<Tensor<T>>> = None;
        let mut total = 0.0;
        let mut start = 0;
        while start < inputs.len() {
            let end = (start + chunk).min(inputs.len());
            let grads = {
                let p = model.store().bind(&tape, true);
                let (logits, next) = model.forward_window(&p, &inputs.slice(start, end), state.as_deref())?;
                let loss = logits.cross_entropy(&targets[start..end])?;
                total += loss.item().expect("scalar loss").as_f64() * (end - start) as f64;
                state = next;
                tape.backward(loss)?
            };
            let store = model.store_mut();
            store.absorb(&grads)?;
            if config.clip > 0.0 {
                store.clip_grad_norm(T::lit(config.clip));
            }
            adam.step(store)?;
            start = end;
        }
        let mean = total / inputs.len() as f64;
        on_epoch(epoch, mean);
        trace.epoch_loss.push(mean);
        if config.stop_below_ppl.is_some_and(|t| mean.exp() < t) {
            break;
        }
    }
    Ok(trace)
}
