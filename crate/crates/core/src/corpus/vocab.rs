use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{dummy_sense_key, is_dummy_key, LabelledSentence, Lemmatizer, SenseId, TokenStream, WordId, EOS, UNK};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub form: String,
    pub id: WordId,
    pub frequency: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenseEntry {
    pub key: String,
    pub id: SenseId,
    /// First word (by id) that carries this sense.
    pub word: WordId,
    pub is_dummy: bool,
}

/// Serialised form of a [`Vocabulary`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabularyDump {
    pub min_freq: u64,
    pub words: Vec<VocabEntry>,
    pub senses: Vec<SenseEntry>,
    pub word_senses: Vec<Vec<SenseId>>,
    /// Inflected surface form to the id of its lemma.
    pub forms: BTreeMap<String, WordId>,
}

/// Word and sense vocabularies with the word-to-senses relation.
///
/// Word ids are dense; `<unk>` is 0 and `<eos>` is 1. Every word has at
/// least one sense, and the senses of one word have contiguous ids unless a
/// sense key is shared between words.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    dump: VocabularyDump,
    word_index: HashMap<String, WordId>,
    sense_index: HashMap<String, SenseId>,
}

pub const UNK_ID: WordId = WordId(0);
pub const EOS_ID: WordId = WordId(1);

/// Builds the vocabularies.
///
/// A word enters the vocabulary when it occurs at least `min_freq` times in
/// the labelled corpus or anywhere in the plain-text corpus; everything else
/// maps to `<unk>`. Tokens are lowercased and lemmatized first. Senses are
/// the labels seen on in-vocabulary words, plus a dummy sense for every word
/// that occurs unlabelled or has no label at all.
pub fn build_vocab(
    pretrain: &[Vec<String>],
    labelled: &[LabelledSentence],
    min_freq: u64,
    lemmatizer: &Lemmatizer,
) -> Result<Vocabulary> {
    if labelled.iter().all(|s| s.tokens.is_empty()) {
        return Err(Error::Empty("labelled corpus"));
    }
    let reserved = |w: &str| w == UNK || w == EOS;

    let mut labelled_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut pretrain_counts: BTreeMap<String, u64> = BTreeMap::new();
    for s in labelled {
        for t in &s.tokens {
            *labelled_counts.entry(lemmatizer.normalize(t)).or_default() += 1;
        }
    }
    for line in pretrain {
        for t in line {
            *pretrain_counts.entry(lemmatizer.normalize(t)).or_default() += 1;
        }
    }

    let mut admitted: Vec<(String, u64)> = labelled_counts
        .iter()
        .filter(|(w, &c)| !reserved(w) && (c >= min_freq || pretrain_counts.contains_key(*w)))
        .map(|(w, &c)| (w.clone(), c + pretrain_counts.get(w).copied().unwrap_or(0)))
        .chain(
            pretrain_counts
                .iter()
                .filter(|(w, _)| !reserved(w) && !labelled_counts.contains_key(*w))
                .map(|(w, &c)| (w.clone(), c)),
        )
        .collect();
    admitted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let oov: u64 = labelled_counts
        .iter()
        .filter(|(w, &c)| !reserved(w) && c < min_freq && !pretrain_counts.contains_key(*w))
        .map(|(_, &c)| c)
        .sum::<u64>()
        + labelled_counts.get(UNK).copied().unwrap_or(0)
        + pretrain_counts.get(UNK).copied().unwrap_or(0);
    let sentences = (labelled.len() + pretrain.len()) as u64;

    let mut words = vec![
        VocabEntry {
            form: UNK.into(),
            id: UNK_ID,
            frequency: oov,
        },
        VocabEntry {
            form: EOS.into(),
            id: EOS_ID,
            frequency: sentences,
        },
    ];
    for (form, frequency) in admitted {
        let id = WordId(words.len());
        words.push(VocabEntry { form, id, frequency });
    }
    let word_index: HashMap<String, WordId> = words.iter().map(|e| (e.form.clone(), e.id)).collect();

    let mut keys: Vec<BTreeSet<String>> = vec![BTreeSet::new(); words.len()];
    keys[UNK_ID.0].insert(dummy_sense_key(UNK));
    keys[EOS_ID.0].insert(dummy_sense_key(EOS));
    let mut forms = BTreeMap::new();
    for s in labelled {
        for (t, label) in s.tokens.iter().zip(&s.senses) {
            let form = lemmatizer.normalize(t);
            match word_index.get(&form) {
                Some(&id) if !reserved(&form) => {
                    keys[id.0].insert(label.clone().unwrap_or_else(|| dummy_sense_key(&form)));
                    record_form(&mut forms, t, &form, id);
                }
                _ => {}
            }
        }
    }
    for line in pretrain {
        for t in line {
            let form = lemmatizer.normalize(t);
            if let Some(&id) = word_index.get(&form) {
                record_form(&mut forms, t, &form, id);
            }
        }
    }
    for (id, set) in keys.iter_mut().enumerate() {
        if set.is_empty() {
            set.insert(dummy_sense_key(&words[id].form));
        }
    }

    let mut senses: Vec<SenseEntry> = Vec::new();
    let mut sense_index: HashMap<String, SenseId> = HashMap::new();
    let mut word_senses = Vec::with_capacity(words.len());
    for (w, set) in keys.into_iter().enumerate() {
        let mut ids = Vec::with_capacity(set.len());
        for key in set {
            let id = *sense_index.entry(key.clone()).or_insert_with(|| {
                let id = SenseId(senses.len());
                senses.push(SenseEntry {
                    is_dummy: is_dummy_key(&key),
                    key,
                    id,
                    word: WordId(w),
                });
                id
            });
            ids.push(id);
        }
        ids.sort();
        word_senses.push(ids);
    }

    Ok(Vocabulary {
        dump: VocabularyDump {
            min_freq,
            words,
            senses,
            word_senses,
            forms,
        },
        word_index,
        sense_index,
    })
}

fn record_form(forms: &mut BTreeMap<String, WordId>, raw: &str, lemma: &str, id: WordId) {
    let lower = raw.to_lowercase();
    if lower != lemma {
        forms.entry(lower).or_insert(id);
    }
}

impl Vocabulary {
    pub fn from_dump(dump: VocabularyDump) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("vocabulary dump: {msg}"));
        if dump.words.len() < 2 || dump.words[0].form != UNK || dump.words[1].form != EOS {
            return Err(bad("missing reserved entries".into()));
        }
        if dump.word_senses.len() != dump.words.len() {
            return Err(bad("word/sense table size mismatch".into()));
        }
        for (i, e) in dump.words.iter().enumerate() {
            if e.id.0 != i {
                return Err(bad(format!("word ids not dense at {i}")));
            }
            if dump.word_senses[i].is_empty() {
                return Err(bad(format!("word `{}` has no sense", e.form)));
            }
        }
        for (i, s) in dump.senses.iter().enumerate() {
            if s.id.0 != i || s.word.0 >= dump.words.len() {
                return Err(bad(format!("sense `{}` has inconsistent ids", s.key)));
            }
        }
        if dump.word_senses.iter().flatten().any(|s| s.0 >= dump.senses.len()) {
            return Err(bad("word_senses references unknown sense".into()));
        }
        let word_index = dump.words.iter().map(|e| (e.form.clone(), e.id)).collect();
        let sense_index: HashMap<String, SenseId> = dump.senses.iter().map(|s| (s.key.clone(), s.id)).collect();
        if sense_index.len() != dump.senses.len() {
            return Err(bad("duplicate sense keys".into()));
        }
        Ok(Self {
            dump,
            word_index,
            sense_index,
        })
    }

    pub fn dump(&self) -> &VocabularyDump {
        &self.dump
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.dump)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_dump(serde_json::from_str(text)?)
    }

    pub fn min_freq(&self) -> u64 {
        self.dump.min_freq
    }

    pub fn num_words(&self) -> usize {
        self.dump.words.len()
    }

    pub fn num_senses(&self) -> usize {
        self.dump.senses.len()
    }

    pub fn words(&self) -> &[VocabEntry] {
        &self.dump.words
    }

    pub fn senses(&self) -> &[SenseEntry] {
        &self.dump.senses
    }

    pub fn word(&self, id: WordId) -> &VocabEntry {
        &self.dump.words[id.0]
    }

    pub fn sense(&self, id: SenseId) -> &SenseEntry {
        &self.dump.senses[id.0]
    }

    pub fn word_id(&self, form: &str) -> Option<WordId> {
        self.word_index.get(form).copied()
    }

    pub fn sense_id(&self, key: &str) -> Option<SenseId> {
        self.sense_index.get(key).copied()
    }

    pub fn forms(&self) -> &BTreeMap<String, WordId> {
        &self.dump.forms
    }

    pub fn unk(&self) -> WordId {
        UNK_ID
    }

    pub fn eos(&self) -> WordId {
        EOS_ID
    }

    /// Sense set `S(w)`, ascending.
    pub fn senses_of(&self, word: WordId) -> &[SenseId] {
        &self.dump.word_senses[word.0]
    }

    pub fn dummy_of(&self, word: WordId) -> Option<SenseId> {
        self.senses_of(word).iter().copied().find(|&s| self.sense(s).is_dummy)
    }

    /// More than one non-dummy sense.
    pub fn is_polysemous(&self, word: WordId) -> bool {
        self.senses_of(word).iter().filter(|&&s| !self.sense(s).is_dummy).count() > 1
    }

    /// Vocabulary id of a raw token (lowercased and lemmatized), or `<unk>`.
    pub fn lookup(&self, lemmatizer: &Lemmatizer, token: &str) -> WordId {
        self.word_id(&lemmatizer.normalize(token)).unwrap_or(UNK_ID)
    }

    pub fn encode_words(&self, lemmatizer: &Lemmatizer, tokens: &[String]) -> Vec<WordId> {
        tokens.iter().map(|t| self.lookup(lemmatizer, t)).collect()
    }

    /// Plain-text lines to word ids, `<eos>` after every line.
    pub fn encode_plain(&self, lemmatizer: &Lemmatizer, lines: &[Vec<String>]) -> Vec<WordId> {
        let mut out = Vec::new();
        for line in lines {
            out.extend(self.encode_words(lemmatizer, line));
            out.push(EOS_ID);
        }
        out
    }

    /// Encodes one labelled sentence; no `<eos>` is appended.
    ///
    /// Out-of-vocabulary tokens become `<unk>` with its dummy sense, whatever
    /// their label. An in-vocabulary token's label must be one of its senses;
    /// unlabelled tokens take the word's dummy sense.
    pub fn encode_sentence(&self, lemmatizer: &Lemmatizer, sentence: &LabelledSentence) -> Result<TokenStream> {
        let unk_sense = self.dummy_of(UNK_ID).expect("<unk> has a dummy sense");
        let mut stream = TokenStream::default();
        for (t, label) in sentence.tokens.iter().zip(&sentence.senses) {
            let form = lemmatizer.normalize(t);
            let Some(word) = self.word_id(&form) else {
                stream.push(UNK_ID, unk_sense);
                continue;
            };
            if word == UNK_ID {
                stream.push(UNK_ID, unk_sense);
                continue;
            }
            let key = label.clone().unwrap_or_else(|| dummy_sense_key(&form));
            let sense = self
                .sense_id(&key)
                .filter(|s| self.senses_of(word).contains(s))
                .ok_or_else(|| Error::UnknownSense {
                    key: key.clone(),
                    word: form.clone(),
                })?;
            stream.push(word, sense);
        }
        Ok(stream)
    }

    /// Concatenates sentences with an `<eos>` token after each.
    pub fn encode_stream(&self, lemmatizer: &Lemmatizer, sentences: &[LabelledSentence]) -> Result<TokenStream> {
        let eos_sense = self.dummy_of(EOS_ID).expect("<eos> has a dummy sense");
        let mut stream = TokenStream::default();
        for s in sentences {
            stream.extend(&self.encode_sentence(lemmatizer, s)?);
            stream.push(EOS_ID, eos_sense);
        }
        Ok(stream)
    }
}
