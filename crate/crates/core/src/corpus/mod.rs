//! Vocabularies, lemmatization and aligned (word, sense) token streams.

mod lemma;
mod split;
mod vocab;

pub use lemma::{Lemmatizer, PosHint};
pub use split::{split_documents, Split};
pub use vocab::{build_vocab, SenseEntry, VocabEntry, Vocabulary, VocabularyDump};

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";
pub const DUMMY_MARKER: &str = ".dummySense.";

/// Key of the synthetic sense given to words without a sense label.
pub fn dummy_sense_key(word: &str) -> String {
    format!("{word}{DUMMY_MARKER}01")
}

pub fn is_dummy_key(key: &str) -> bool {
    key.contains(DUMMY_MARKER)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WordId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SenseId(pub usize);

impl WordId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl SenseId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One line of the labelled corpus: tokens with an optional sense label each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledSentence {
    pub tokens: Vec<String>,
    pub senses: Vec<Option<String>>,
    /// Document the sentence belongs to; sentences without one form their
    /// own document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc: Option<String>,
}

impl LabelledSentence {
    pub fn unlabelled(tokens: &[&str]) -> Self {
        Self {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            senses: vec![None; tokens.len()],
            doc: None,
        }
    }
}

/// Reads the JSON-lines labelled corpus. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn read_labelled(reader: impl BufRead) -> Result<Vec<LabelledSentence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let s: LabelledSentence = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if s.tokens.len() != s.senses.len() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("{} tokens but {} sense entries", s.tokens.len(), s.senses.len()),
            });
        }
        out.push(s);
    }
    Ok(out)
}

pub fn parse_labelled(text: &str) -> Result<Vec<LabelledSentence>> {
    read_labelled(text.as_bytes())
}

/// Reads the whitespace-tokenised plain-text corpus, one sentence per line.
pub fn read_plain(reader: impl BufRead) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !tokens.is_empty() {
            out.push(tokens);
        }
    }
    Ok(out)
}

pub fn parse_plain(text: &str) -> Result<Vec<Vec<String>>> {
    read_plain(text.as_bytes())
}

/// Aligned word and sense ids; every position carries exactly one sense.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    words: Vec<WordId>,
    senses: Vec<SenseId>,
}

impl TokenStream {
    pub fn new(words: Vec<WordId>, senses: Vec<SenseId>) -> Result<Self> {
        if words.len() != senses.len() {
            return Err(Error::Length(format!(
                "{} words but {} senses",
                words.len(),
                senses.len()
            )));
        }
        Ok(Self { words, senses })
    }

    pub fn words(&self) -> &[WordId] {
        &self.words
    }

    pub fn senses(&self) -> &[SenseId] {
        &self.senses
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn push(&mut self, word: WordId, sense: SenseId) {
        self.words.push(word);
        self.senses.push(sense);
    }

    pub fn extend(&mut self, other: &TokenStream) {
        self.words.extend_from_slice(&other.words);
        self.senses.extend_from_slice(&other.senses);
    }

    /// Positions `from..`, i.e. the targets when predicting `from` steps ahead.
    pub fn tail(&self, from: usize) -> TokenStream {
        let from = from.min(self.len());
        TokenStream {
            words: self.words[from..].to_vec(),
            senses: self.senses[from..].to_vec(),
        }
    }

    pub fn word_indices(&self) -> Vec<usize> {
        self.words.iter().map(|w| w.0).collect()
    }

    pub fn sense_indices(&self) -> Vec<usize> {
        self.senses.iter().map(|s| s.0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labelled_lines_parse_with_nulls() {
        let text = r#"{"tokens": ["John", "sat"], "senses": [null, "sit.v.01"]}

{"tokens": ["."], "senses": [null], "doc": "d1"}"#;
        let s = parse_labelled(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].senses[1].as_deref(), Some("sit.v.01"));
        assert_eq!(s[1].doc.as_deref(), Some("d1"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"tokens\": [\"a\"], \"senses\": [null]}\n{\"tokens\": [\"a\"]";
        match parse_labelled(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unequal_arrays_rejected() {
        let text = r#"{"tokens": ["a", "b"], "senses": [null]}"#;
        assert!(matches!(parse_labelled(text), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn dummy_keys() {
        assert_eq!(dummy_sense_key("for"), "for.dummySense.01");
        assert!(is_dummy_key("for.dummySense.01"));
        assert!(!is_dummy_key("bank.n.01"));
    }
}
