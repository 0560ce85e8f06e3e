use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::corpus::UNK;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::seeded_rng;

/// Standard deviation of generated fallback vectors.
pub const FALLBACK_STD: f64 = 0.1;

/// Word-vector store of fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors<T> {
    dim: usize,
    table: BTreeMap<String, Vec<T>>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl<T: Scalar> WordVectors<T> {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("word-vector dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            table: BTreeMap::new(),
        })
    }

    /// Parses the text format: `token v1 .. vd` per line. A leading
    /// `count dim` header line is skipped; blank lines are ignored.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut dim = None;
        let mut table = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<&str> = parts.collect();
            if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
                continue;
            }
            let parsed = values
                .iter()
                .map(|v| v.parse::<f64>().map(T::lit))
                .collect::<std::result::Result<Vec<T>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("bad float: {e}"),
                })?;
            match dim {
                None if parsed.is_empty() => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "vector has no components".into(),
                    })
                }
                None => dim = Some(parsed.len()),
                Some(d) if d != parsed.len() => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("expected {d} components, found {}", parsed.len()),
                    })
                }
                _ => {}
            }
            table.insert(token.to_string(), parsed);
        }
        let dim = dim.ok_or(Error::Empty("word-vector file"))?;
        Ok(Self { dim, table })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }

    /// Text format, one word per line in lexicographic order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, v) in &self.table {
            out.push_str(w);
            for x in v {
                write!(out, " {:e}", x.as_f64()).expect("write to string");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[T]> {
        self.table.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.table.contains_key(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<T>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape(
                "word_vectors.insert",
                format!("expected dim {}, got {}", self.dim, vector.len()),
            ));
        }
        self.table.insert(word.into(), vector);
        Ok(())
    }

    /// Vector of `word`, or of `<unk>` when the word is missing.
    pub fn get_or_unk(&self, word: &str) -> Result<&[T]> {
        self.get(word)
            .or_else(|| self.get(UNK))
            .ok_or_else(|| Error::Graph(format!("no vector for `{word}` and no `{UNK}` vector")))
    }

    /// Adds a generated vector for every missing word and returns how many
    /// were added. Each vector depends only on `seed` and the word itself, so
    /// the result does not depend on iteration order.
    pub fn fill_missing<'a>(&mut self, words: impl IntoIterator<Item = &'a str>, seed: u64) -> usize {
        let normal = Normal::new(0.0, FALLBACK_STD).expect("valid normal");
        let mut added = 0;
        for w in words {
            if self.table.contains_key(w) {
                continue;
            }
            let mut rng = seeded_rng(seed ^ fnv1a(w));
            let v = (0..self.dim).map(|_| T::lit(normal.sample(&mut rng))).collect();
            self.table.insert(w.to_string(), v);
            added += 1;
        }
        added
    }
}

/// Splits a gloss into lowercase tokens with surrounding punctuation removed.
pub fn gloss_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Mean of the tokens' vectors; tokens missing from the store contribute
/// the `<unk>` vector.
pub fn sentence_embed<T: Scalar, S: AsRef<str>>(tokens: &[S], vectors: &WordVectors<T>) -> Result<Vec<T>> {
    if tokens.is_empty() {
        return Err(Error::Empty("sentence"));
    }
    let mut acc = vec![T::zero(); vectors.dim()];
    for t in tokens {
        for (a, &x) in acc.iter_mut().zip(vectors.get_or_unk(t.as_ref())?) {
            *a += x;
        }
    }
    let n = T::lit(tokens.len() as f64);
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> WordVectors<f64> {
        WordVectors::parse("3 2\n<unk> 0 0\ncat 1 2\ndog -1 -2\nsat 0.5 4\n").unwrap()
    }

    #[test]
    fn header_line_is_skipped() {
        let s = store();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.len(), 4);
        assert_eq!(s.get("cat"), Some(&[1.0, 2.0][..]));
    }

    #[test]
    fn ragged_file_names_the_line() {
        let err = WordVectors::<f64>::parse("a 1 2\nb 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn mean_of_one_is_itself() {
        assert_eq!(sentence_embed(&["cat"], &store()).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn opposite_vectors_cancel() {
        assert_eq!(sentence_embed(&["cat", "dog"], &store()).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn three_word_mean_matches_hand_sum() {
        // (1 + 0.5 + 0) / 3, (2 + 4 + 0) / 3 with "zebra" falling back to <unk>
        let m = sentence_embed(&["cat", "sat", "zebra"], &store()).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-15);
        assert!((m[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_sentence_is_an_error() {
        assert!(sentence_embed::<f64, &str>(&[], &store()).is_err());
    }

    #[test]
    fn fallback_is_order_independent_and_round_trips() {
        let mut a = store();
        let mut b = store();
        assert_eq!(a.fill_missing(["x", "y", "cat"], 9), 2);
        b.fill_missing(["y", "x"], 9);
        assert_eq!(a, b);
        let back = WordVectors::<f64>::parse(&a.to_text()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn gloss_tokens_strip_punctuation() {
        assert_eq!(gloss_tokens("Sloping land (beside water)."), vec!["sloping", "land", "beside", "water"]);
    }
}
