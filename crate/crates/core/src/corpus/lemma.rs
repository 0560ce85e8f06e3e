use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosHint {
    Noun,
    Verb,
    Adjective,
}

const NOUN_RULES: &[(&str, &str)] = &[
    ("ses", "s"),
    ("xes", "x"),
    ("zes", "z"),
    ("ches", "ch"),
    ("shes", "sh"),
    ("men", "man"),
    ("ies", "y"),
    ("s", ""),
];

const VERB_RULES: &[(&str, &str)] = &[
    ("s", ""),
    ("ies", "y"),
    ("es", "e"),
    ("es", ""),
    ("ed", "e"),
    ("ed", ""),
    ("ing", "e"),
    ("ing", ""),
];

const ADJ_RULES: &[(&str, &str)] = &[("er", ""), ("est", ""), ("er", "e"), ("est", "e")];

/// Irregular forms always recognised, whatever the inventory supplies.
const BUILTIN_EXCEPTIONS: &[(&str, &str)] = &[
    ("am", "be"),
    ("are", "be"),
    ("is", "be"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("being", "be"),
    ("has", "have"),
    ("had", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("said", "say"),
    ("says", "say"),
    ("went", "go"),
    ("gone", "go"),
];

/// Maps inflected forms to their parent form: an exceptions table first,
/// then suffix rules whose output must be a known lemma. Unknown forms map
/// to themselves.
///
/// Exception chains are collapsed at construction, and every exception
/// target counts as a known lemma, so `lemmatize` is idempotent.
#[derive(Clone, Debug, Default)]
pub struct Lemmatizer {
    exceptions: BTreeMap<String, String>,
    known: BTreeSet<String>,
}

impl Lemmatizer {
    /// Built-in irregulars merged with `exceptions`; `known_lemmas` validates
    /// suffix-rule candidates.
    pub fn new<'a>(
        exceptions: impl IntoIterator<Item = (&'a str, &'a str)>,
        known_lemmas: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let mut raw: BTreeMap<String, String> = BUILTIN_EXCEPTIONS
            .iter()
            .map(|(f, l)| (f.to_string(), l.to_string()))
            .collect();
        for (form, lemma) in exceptions {
            if form != lemma {
                raw.insert(form.to_string(), lemma.to_string());
            }
        }
        let mut resolved = BTreeMap::new();
        for form in raw.keys() {
            let mut seen = BTreeSet::from([form.as_str()]);
            let mut cur = raw[form].as_str();
            let mut cyclic = false;
            while let Some(next) = raw.get(cur) {
                if !seen.insert(cur) {
                    cyclic = true;
                    break;
                }
                cur = next;
            }
            if !cyclic && cur != form {
                resolved.insert(form.clone(), cur.to_string());
            }
        }
        let mut known: BTreeSet<String> = known_lemmas.into_iter().map(str::to_string).collect();
        known.extend(resolved.values().cloned());
        Self {
            exceptions: resolved,
            known,
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(std::iter::empty(), std::iter::empty())
    }

    pub fn exceptions(&self) -> &BTreeMap<String, String> {
        &self.exceptions
    }

    pub fn is_known(&self, lemma: &str) -> bool {
        self.known.contains(lemma)
    }

    pub fn lemmatize(&self, form: &str, pos: Option<PosHint>) -> String {
        if let Some(lemma) = self.exceptions.get(form) {
            return lemma.clone();
        }
        if self.known.contains(form) {
            return form.to_string();
        }
        let rule_sets: &[&[(&str, &str)]] = match pos {
            Some(PosHint::Noun) => &[NOUN_RULES],
            Some(PosHint::Verb) => &[VERB_RULES],
            Some(PosHint::Adjective) => &[ADJ_RULES],
            None => &[NOUN_RULES, VERB_RULES, ADJ_RULES],
        };
        for rules in rule_sets {
            for (suffix, replacement) in rules.iter() {
                if let Some(stem) = form.strip_suffix(suffix) {
                    if stem.is_empty() {
                        continue;
                    }
                    let candidate = format!("{stem}{replacement}");
                    if self.known.contains(&candidate) {
                        return self.exceptions.get(&candidate).cloned().unwrap_or(candidate);
                    }
                }
            }
        }
        form.to_string()
    }

    /// Lowercases a raw corpus token and lemmatizes it.
    pub fn normalize(&self, token: &str) -> String {
        self.lemmatize(&token.to_lowercase(), None)
    }
}
