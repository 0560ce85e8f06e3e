//! Flat run configuration shared by every pipeline step.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TransformerConfig;
use crate::senselm::{SenseHeadConfig, SenseVariant};
use crate::standardlm::{Backbone, LmConfig, LmKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    Average,
    Gru,
}

/// Every setting of a run. Relative paths are resolved against the
/// directory of the config file they were read from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub pretrain: PathBuf,
    pub labelled: PathBuf,
    pub inventory: PathBuf,
    pub vectors: PathBuf,
    pub out_dir: PathBuf,

    pub min_freq: u64,

    pub lm: LmKind,
    pub layers: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Transformer window.
    pub context: usize,
    pub use_graph: bool,

    pub variant: SenseVariant,
    pub k: Option<usize>,
    pub sense_layers: usize,
    pub sense_hidden: usize,
    pub sense_dim: usize,
    /// Preceding tokens averaged into the local context.
    pub context_len: usize,
    pub context_encoder: ContextKind,

    pub lr: f64,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub sense_epochs: usize,
    pub bptt: usize,
    pub clip: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            pretrain: "pretrain.txt".into(),
            labelled: "labelled.jsonl".into(),
            inventory: "inventory.json".into(),
            vectors: "vectors.txt".into(),
            out_dir: "out".into(),
            min_freq: 2,
            lm: LmKind::Gru,
            layers: 3,
            hidden: 512,
            embed_dim: 300,
            heads: 4,
            ff_dim: 1024,
            context: 128,
            use_graph: false,
            variant: SenseVariant::Mfs,
            k: None,
            sense_layers: 3,
            sense_hidden: 512,
            sense_dim: 300,
            context_len: 20,
            context_encoder: ContextKind::Average,
            lr: 1e-3,
            pretrain_epochs: 5,
            epochs: 10,
            sense_epochs: 10,
            bptt: 35,
            clip: 5.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.pretrain,
            &mut self.labelled,
            &mut self.inventory,
            &mut self.vectors,
            &mut self.out_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Rejects inconsistent combinations before any work starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (self.variant.takes_k(), self.k) {
            (true, None) => return bad(format!("variant {} requires --k", self.variant.name())),
            (true, Some(0)) => return bad("K must be at least 1".into()),
            (false, Some(_)) => return bad(format!("variant {} does not take K", self.variant.name())),
            _ => {}
        }
        let dims = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("context", self.context),
            ("sense_layers", self.sense_layers),
            ("sense_hidden", self.sense_hidden),
            ("sense_dim", self.sense_dim),
            ("context_len", self.context_len),
            ("bptt", self.bptt),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        let transformer = self.lm == LmKind::Transformer || self.variant == SenseVariant::DenseTransformer;
        if transformer && (self.heads == 0 || self.ff_dim == 0) {
            return bad("transformer needs heads and ff_dim".into());
        }
        if self.lm == LmKind::Transformer && !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by {} heads", self.hidden, self.heads));
        }
        if self.variant == SenseVariant::DenseTransformer && !self.sense_hidden.is_multiple_of(self.heads) {
            return bad(format!("sense_hidden {} not divisible by {} heads", self.sense_hidden, self.heads));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        Ok(())
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            kind: self.lm,
            layers: self.layers,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            heads: self.heads,
            ff_dim: self.ff_dim,
            context: self.context,
            use_graph: self.use_graph,
            zero_output: false,
        }
    }

    /// GRU for SelectK and dense-gru, transformer for dense-transformer.
    pub fn sense_head_config(&self) -> SenseHeadConfig {
        let backbone = if self.variant == SenseVariant::DenseTransformer {
            Backbone::Transformer(TransformerConfig {
                d_model: self.sense_hidden,
                layers: self.sense_layers,
                heads: self.heads,
                ff_dim: self.ff_dim,
                context: self.context,
            })
        } else {
            Backbone::Gru {
                layers: self.sense_layers,
                hidden: self.sense_hidden,
            }
        };
        SenseHeadConfig {
            backbone,
            word_dim: self.embed_dim,
            sense_dim: self.sense_dim,
            use_graph: self.use_graph,
            zero_output: false,
        }
    }

    pub fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            lr: self.lr,
            bptt: self.bptt,
            clip: self.clip,
            stop_below_ppl: None,
        }
    }

    /// Every setting except the file paths, for recording in reports.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(map) = v.as_object_mut() {
            for key in ["pretrain", "labelled", "inventory", "vectors", "out_dir"] {
                map.remove(key);
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn k_is_required_and_rejected_by_variant() {
        let mut c = RunConfig {
            variant: SenseVariant::SenseContext,
            k: None,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        c.k = Some(5);
        c.validate().unwrap();
        c.variant = SenseVariant::Mfs;
        assert!(c.validate().is_err());
        c.k = None;
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_unknown_key() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert!(RunConfig::from_toml("sed = 3").is_err());
    }

    #[test]
    fn echo_drops_paths_only() {
        let e = RunConfig::default().echo();
        assert!(e.get("out_dir").is_none());
        assert_eq!(e["lm"], "gru");
        assert_eq!(e["variant"], "mfs");
        assert!(e["k"].is_null());
    }

    #[test]
    fn variant_names_parse_in_toml() {
        let c = RunConfig::from_toml("variant = \"dense-gru\"\nlm = \"gold\"").unwrap();
        assert_eq!(c.variant, SenseVariant::DenseGru);
        assert_eq!(c.lm, LmKind::Gold);
    }
}
