use serde::{Deserialize, Serialize};

use super::{Embedding, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{concat_cols, Bound, ParamStore, Rng, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Longest window the positional table covers.
    pub context: usize,
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Pre-norm decoder-only transformer over a fixed maximum window with
/// learned absolute positions.
#[derive(Clone, Debug)]
pub struct CausalTransformer {
    cfg: TransformerConfig,
    positions: Embedding,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
}

impl CausalTransformer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: TransformerConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.heads == 0 || !cfg.d_model.is_multiple_of(cfg.heads) {
            return Err(Error::Config(format!(
                "model width {} not divisible by {} heads",
                cfg.d_model, cfg.heads
            )));
        }
        if cfg.layers == 0 || cfg.context == 0 {
            return Err(Error::Config("transformer needs layers and a context".into()));
        }
        let d = cfg.d_model;
        let positions = Embedding::random(store, &format!("{name}.pos"), cfg.context, d, rng)?;
        let blocks = (0..cfg.layers)
            .map(|l| {
                let b = format!("{name}.b{l}");
                Ok(Block {
                    ln1: LayerNorm::new(store, &format!("{b}.ln1"), d)?,
                    q: Linear::new(store, &format!("{b}.q"), d, d, false, rng)?,
                    k: Linear::new(store, &format!("{b}.k"), d, d, false, rng)?,
                    v: Linear::new(store, &format!("{b}.v"), d, d, false, rng)?,
                    o: Linear::new(store, &format!("{b}.o"), d, d, true, rng)?,
                    ln2: LayerNorm::new(store, &format!("{b}.ln2"), d)?,
                    ff1: Linear::new(store, &format!("{b}.ff1"), d, cfg.ff_dim, true, rng)?,
                    ff2: Linear::new(store, &format!("{b}.ff2"), cfg.ff_dim, d, true, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        let ln_final = LayerNorm::new(store, &format!("{name}.ln_f"), d)?;
        Ok(Self {
            cfg,
            positions,
            blocks,
            ln_final,
        })
    }

    pub fn config(&self) -> TransformerConfig {
        self.cfg
    }

    /// Maps `[L, d_model]` token vectors to `[L, d_model]` contextual states;
    /// position `i` attends to positions `0..=i` only.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, '_, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (len, d) = x.dims();
        if len > self.cfg.context {
            return Err(Error::shape("transformer", format!("window {len} exceeds context {}", self.cfg.context)));
        }
        if d != self.cfg.d_model {
            return Err(Error::shape("transformer", format!("width {d}, expected {}", self.cfg.d_model)));
        }
        let pos: Vec<usize> = (0..len).collect();
        let mut h = x.add(&self.positions.lookup(p, &pos)?)?;
        for block in &self.blocks {
            h = h.add(&self.attention(p, block, &block.ln1.forward(p, &h)?)?)?;
            let ff = block.ff2.forward(p, &block.ff1.forward(p, &block.ln2.forward(p, &h)?)?.relu()?)?;
            h = h.add(&ff)?;
        }
        self.ln_final.forward(p, &h)
    }

    fn attention<'t, T: Scalar>(&self, p: &Bound<'t, '_, T>, block: &Block, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let q = block.q.forward(p, x)?;
        let k = block.k.forward(p, x)?;
        let v = block.v.forward(p, x)?;
        let dh = self.cfg.d_model / self.cfg.heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let heads = (0..self.cfg.heads)
            .map(|h| {
                let (a, b) = (h * dh, (h + 1) * dh);
                let scores = q.slice_cols(a, b)?.matmul(&k.slice_cols(a, b)?.transpose()?)?.scale(scale)?;
                scores.causal_softmax()?.matmul(&v.slice_cols(a, b)?)
            })
            .collect::<Result<Vec<_>>>()?;
        block.o.forward(p, &concat_cols(&heads)?)
    }
}
