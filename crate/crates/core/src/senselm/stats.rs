use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{SenseId, TokenStream, Vocabulary, WordId};
use crate::dictgraph::WordVectors;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::standardlm::{SeqInputs, SeqModel};

/// Local context of each position from the words before it.
#[derive(Clone, Debug)]
pub enum ContextEncoder<T> {
    /// Mean of the fixed embeddings of the preceding `window` words.
    Average { table: Vec<Vec<T>>, window: usize },
    /// Top GRU state after reading every preceding word.
    Recurrent(SeqModel<T>),
}

impl<T: Scalar> ContextEncoder<T> {
    /// Averaging encoder over each vocabulary word's vector (`<unk>`'s for
    /// words the store lacks).
    pub fn average(vocab: &Vocabulary, vectors: &WordVectors<T>, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("context length must be positive".into()));
        }
        let table = vocab
            .words()
            .iter()
            .map(|e| vectors.get_or_unk(&e.form).map(<[T]>::to_vec))
            .collect::<Result<_>>()?;
        Ok(Self::Average { table, window })
    }

    /// Recurrent encoder over a word-level GRU.
    pub fn recurrent(model: SeqModel<T>) -> Result<Self> {
        if !model.is_recurrent() {
            return Err(Error::Config("recurrent context needs a GRU model".into()));
        }
        Ok(Self::Recurrent(model))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Average { table, .. } => table.first().map_or(0, Vec::len),
            Self::Recurrent(m) => m.width(),
        }
    }

    /// Entry `t` summarises `words[..t]`; entry 0 is the zero vector.
    pub fn contexts(&self, words: &[WordId]) -> Result<Vec<Vec<T>>> {
        let d = self.dim();
        match self {
            Self::Average { table, window } => {
                if let Some(bad) = words.iter().find(|w| w.0 >= table.len()) {
                    return Err(Error::OutOfRange {
                        what: "word id",
                        id: bad.0,
                        size: table.len(),
                    });
                }
                Ok((0..words.len())
                    .map(|t| {
                        let prev = &words[t.saturating_sub(*window)..t];
                        let mut acc = vec![T::zero(); d];
                        for w in prev {
                            acc.iter_mut().zip(&table[w.0]).for_each(|(a, &x)| *a += x);
                        }
                        if !prev.is_empty() {
                            let n = T::lit(prev.len() as f64);
                            acc.iter_mut().for_each(|a| *a /= n);
                        }
                        acc
                    })
                    .collect())
            }
            Self::Recurrent(model) => {
                let mut out = vec![vec![T::zero(); d]];
                if words.len() > 1 {
                    let inputs = SeqInputs {
                        streams: vec![words[..words.len() - 1].iter().map(|w| w.0).collect()],
                        words: words[..words.len() - 1].to_vec(),
                    };
                    out.extend(model.predict_hidden(&inputs)?);
                }
                out.truncate(words.len());
                Ok(out)
            }
        }
    }
}

/// Training-split statistics: per-sense counts and average contexts, and
/// the most frequent sense of each word.
#[derive(Clone, Debug, PartialEq)]
pub struct SenseStats<T> {
    dim: usize,
    counts: Vec<u64>,
    contexts: Vec<Option<Vec<T>>>,
    mfs: Vec<Option<SenseId>>,
}

/// Averages the per-occurrence contexts of every sense. `contexts[t]` is
/// the context of position `t` of `stream`.
pub fn build_sense_stats<T: Scalar>(
    stream: &TokenStream,
    contexts: &[Vec<T>],
    num_words: usize,
    num_senses: usize,
) -> Result<SenseStats<T>> {
    if contexts.len() != stream.len() {
        return Err(Error::Length(format!("{} contexts for {} positions", contexts.len(), stream.len())));
    }
    let dim = contexts.first().map_or(0, Vec::len);
    let mut counts = vec![0u64; num_senses];
    let mut sums: Vec<Option<Vec<T>>> = vec![None; num_senses];
    let mut pair_counts: Vec<std::collections::BTreeMap<SenseId, u64>> = vec![Default::default(); num_words];
    for ((&w, &s), ctx) in stream.words().iter().zip(stream.senses()).zip(contexts) {
        if s.0 >= num_senses || w.0 >= num_words {
            return Err(Error::OutOfRange {
                what: "stream id",
                id: s.0.max(w.0),
                size: num_senses.min(num_words),
            });
        }
        if ctx.len() != dim {
            return Err(Error::shape("sense_stats", format!("context of width {}, expected {dim}", ctx.len())));
        }
        counts[s.0] += 1;
        let acc = sums[s.0].get_or_insert_with(|| vec![T::zero(); dim]);
        acc.iter_mut().zip(ctx).for_each(|(a, &x)| *a += x);
        *pair_counts[w.0].entry(s).or_default() += 1;
    }
    let contexts = sums
        .into_iter()
        .zip(&counts)
        .map(|(sum, &c)| sum.map(|v| v.into_iter().map(|x| x / T::lit(c as f64)).collect()))
        .collect();
    let mfs = pair_counts
        .iter()
        .map(|m| {
            // ascending ids, so the first maximum wins ties
            m.iter()
                .fold(None, |best: Option<(SenseId, u64)>, (&s, &c)| match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((s, c)),
                })
                .map(|(s, _)| s)
        })
        .collect();
    Ok(SenseStats {
        dim,
        counts,
        contexts,
        mfs,
    })
}

#[derive(Serialize, Deserialize)]
struct StatsMeta {
    format: String,
    version: u32,
    dim: usize,
    counts: Vec<u64>,
    /// Senses whose average context is stored, in blob order.
    with_context: Vec<usize>,
    mfs: Vec<Option<SenseId>>,
}

const STATS_FORMAT: &str = "multisense-sense-stats";

impl<T: Scalar> SenseStats<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_senses(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, sense: SenseId) -> u64 {
        self.counts[sense.0]
    }

    pub fn context(&self, sense: SenseId) -> Option<&[T]> {
        self.contexts[sense.0].as_deref()
    }

    /// Most frequent sense of `word` in training, if it occurred.
    pub fn most_frequent(&self, word: WordId) -> Option<SenseId> {
        self.mfs.get(word.0).copied().flatten()
    }

    /// Writes `{base}.json` (metadata) and `{base}.bin` (little-endian f64
    /// context vectors).
    pub fn save(&self, base: &Path) -> Result<()> {
        let with_context: Vec<usize> = (0..self.counts.len()).filter(|&i| self.contexts[i].is_some()).collect();
        let meta = StatsMeta {
            format: STATS_FORMAT.into(),
            version: 1,
            dim: self.dim,
            counts: self.counts.clone(),
            with_context: with_context.clone(),
            mfs: self.mfs.clone(),
        };
        let mut blob = Vec::with_capacity(with_context.len() * self.dim * 8);
        for &i in &with_context {
            for x in self.contexts[i].as_ref().expect("listed") {
                blob.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        let json = base.with_extension("json");
        let bin = base.with_extension("bin");
        std::fs::write(&json, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&json, e))?;
        std::fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))
    }

    pub fn load(base: &Path) -> Result<Self> {
        let json = base.with_extension("json");
        let bin = base.with_extension("bin");
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let meta: StatsMeta = serde_json::from_str(&text)?;
        if meta.format != STATS_FORMAT || meta.version != 1 {
            return Err(Error::Checkpoint(format!("unsupported sense-stats format {} v{}", meta.format, meta.version)));
        }
        let blob = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if blob.len() != meta.with_context.len() * meta.dim * 8 {
            return Err(Error::Checkpoint(format!("sense-stats blob has {} bytes", blob.len())));
        }
        let mut contexts = vec![None; meta.counts.len()];
        for (k, &i) in meta.with_context.iter().enumerate() {
            let v = (0..meta.dim)
                .map(|c| {
                    let off = (k * meta.dim + c) * 8;
                    T::lit(f64::from_le_bytes(blob[off..off + 8].try_into().expect("8 bytes")))
                })
                .collect();
            *contexts.get_mut(i).ok_or_else(|| Error::Checkpoint(format!("sense {i} out of range")))? = Some(v);
        }
        Ok(Self {
            dim: meta.dim,
            counts: meta.counts,
            contexts,
            mfs: meta.mfs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_encoder(window: usize) -> ContextEncoder<f64> {
        ContextEncoder::Average {
            table: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0], vec![-1.0, 3.0]],
            window,
        }
    }

    fn ids(v: &[usize]) -> Vec<WordId> {
        v.iter().map(|&i| WordId(i)).collect()
    }

    #[test]
    fn first_context_is_zero_and_window_truncates() {
        let c = table_encoder(2).contexts(&ids(&[0, 1, 2, 3])).unwrap();
        assert_eq!(c[0], vec![0.0, 0.0]);
        assert_eq!(c[1], vec![1.0, 0.0]);
        assert_eq!(c[2], vec![0.5, 0.5]);
        assert_eq!(c[3], vec![1.0, 1.5]);
    }

    #[test]
    fn window_mean_matches_hand_sum() {
        let enc = table_encoder(3);
        let words = ids(&[3, 2, 2, 0, 1, 3, 3, 2, 1, 0]);
        let got = enc.contexts(&words).unwrap();
        let ContextEncoder::Average { table, .. } = &enc else { unreachable!() };
        for t in 1..words.len() {
            let from = t.saturating_sub(3);
            for c in 0..2 {
                let want: f64 = words[from..t].iter().map(|w| table[w.0][c]).sum::<f64>() / (t - from) as f64;
                assert!((got[t][c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_occurrence_sc_is_its_context_and_three_average() {
        let enc = table_encoder(2);
        // sense 5 occurs at positions 1, 3 and 4; sense 6 once at position 2
        let stream = TokenStream::new(ids(&[0, 1, 2, 1, 1]), vec![SenseId(0), SenseId(5), SenseId(6), SenseId(5), SenseId(5)]).unwrap();
        let ctx = enc.contexts(stream.words()).unwrap();
        let stats = build_sense_stats(&stream, &ctx, 4, 7).unwrap();
        assert_eq!(stats.context(SenseId(6)).unwrap(), &ctx[2][..]);
        let want: Vec<f64> = (0..2).map(|c| (ctx[1][c] + ctx[3][c] + ctx[4][c]) / 3.0).collect();
        assert_eq!(stats.context(SenseId(5)).unwrap(), &want[..]);
        assert_eq!(stats.count(SenseId(5)), 3);
        assert!(stats.context(SenseId(3)).is_none());
    }

    #[test]
    fn mfs_prefers_count_then_lower_id() {
        let stream = TokenStream::new(
            ids(&[1, 1, 1, 1, 1, 1, 1, 1, 2, 2]),
            [3, 4, 4, 3, 4, 3, 4, 4, 6, 5].iter().map(|&s| SenseId(s)).collect(),
        )
        .unwrap();
        let ctx = vec![vec![0.0]; 10];
        let stats = build_sense_stats(&stream, &ctx, 3, 7).unwrap();
        assert_eq!(stats.most_frequent(WordId(1)), Some(SenseId(4)));
        assert_eq!(stats.most_frequent(WordId(2)), Some(SenseId(5)));
        assert_eq!(stats.most_frequent(WordId(0)), None);
    }

    #[test]
    fn persistence_round_trip() {
        let stream = TokenStream::new(ids(&[0, 1, 2]), vec![SenseId(0), SenseId(2), SenseId(1)]).unwrap();
        let ctx = table_encoder(2).contexts(stream.words()).unwrap();
        let stats = build_sense_stats(&stream, &ctx, 4, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("sense_stats");
        stats.save(&base).unwrap();
        assert_eq!(SenseStats::<f64>::load(&base).unwrap(), stats);
    }
}
