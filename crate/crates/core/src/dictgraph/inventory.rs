use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Lemmatizer;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SenseRecord {
    pub key: String,
    #[serde(default)]
    pub definitions: Vec<String>,
    #[serde(default)]
    pub examples: Vec<String>,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub antonyms: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordRecord {
    pub senses: Vec<SenseRecord>,
}

/// Sense inventory: headword to senses, plus the lemma exceptions table
/// under the reserved `lemma_exceptions` key.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    #[serde(default)]
    pub lemma_exceptions: BTreeMap<String, String>,
    #[serde(flatten)]
    pub words: BTreeMap<String, WordRecord>,
}

impl Inventory {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let inv: Inventory = serde_json::from_str(text).map_err(|e| Error::Inventory(e.to_string()))?;
        inv.validate()?;
        Ok(inv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks key uniqueness and that every synonym/antonym names a sense
    /// defined somewhere in the inventory.
    pub fn validate(&self) -> Result<()> {
        let mut keys = BTreeSet::new();
        for (word, rec) in &self.words {
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::Inventory(format!("invalid headword `{word}`")));
            }
            for s in &rec.senses {
                if s.key.is_empty() {
                    return Err(Error::Inventory(format!("empty sense key under `{word}`")));
                }
                if !keys.insert(s.key.as_str()) {
                    return Err(Error::Inventory(format!("duplicate sense key `{}`", s.key)));
                }
            }
        }
        for (word, rec) in &self.words {
            for s in &rec.senses {
                for r in s.synonyms.iter().chain(&s.antonyms) {
                    if !keys.contains(r.as_str()) {
                        return Err(Error::Inventory(format!(
                            "sense `{}` of `{word}` relates to unknown sense `{r}`",
                            s.key
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Lemmatizer using this inventory's exceptions and headwords.
    pub fn lemmatizer(&self) -> Lemmatizer {
        Lemmatizer::new(
            self.lemma_exceptions.iter().map(|(f, l)| (f.as_str(), l.as_str())),
            self.words.keys().map(String::as_str),
        )
    }

    pub fn num_senses(&self) -> usize {
        self.words.values().map(|w| w.senses.len()).sum()
    }

    /// Sense key to (headword, record).
    pub fn sense_index(&self) -> BTreeMap<&str, (&str, &SenseRecord)> {
        self.words
            .iter()
            .flat_map(|(w, rec)| rec.senses.iter().map(move |s| (s.key.as_str(), (w.as_str(), s))))
            .collect()
    }
}
