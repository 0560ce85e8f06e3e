use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{gloss_tokens, sentence_embed, DictGraph, Inventory, NodeKind, Relation, WordVectors, MAX_AREA_NODES};
use crate::corpus::{is_dummy_key, Vocabulary, WordId, UNK};
use crate::error::Result;
use crate::scalar::Scalar;

/// Counts and warnings produced while building a graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub nodes: usize,
    pub edges: usize,
    pub global_nodes: usize,
    pub sense_nodes: usize,
    pub definition_nodes: usize,
    pub example_nodes: usize,
    pub edges_by_relation: BTreeMap<String, usize>,
    /// Word vectors generated because the vector file lacked them.
    pub generated_vectors: usize,
    /// Non-dummy senses without any gloss; their node takes the word vector.
    pub fallback_senses: Vec<String>,
    /// Glosses with no tokens after punctuation stripping, skipped.
    pub empty_glosses: usize,
    /// Largest area over all vocabulary words.
    pub max_area_nodes: usize,
}

pub struct GraphSources<'a> {
    pub inventory: &'a Inventory,
    pub vocab: &'a Vocabulary,
}

/// Builds the dictionary graph.
///
/// Global nodes come first with node id equal to word id for every
/// vocabulary word, followed by inventory headwords outside the vocabulary
/// and then inflected forms. Each sense node links to its global node(s)
/// and to one node per definition and example. Synonym and antonym
/// relations link the two sense nodes and the two owning global nodes.
/// Inflected forms link to their lemma.
///
/// `vectors` is completed in place with seeded fallback vectors for every
/// global word and gloss token it lacks.
pub fn build_graph<T: Scalar>(
    sources: GraphSources<'_>,
    vectors: &mut WordVectors<T>,
    seed: u64,
) -> Result<(DictGraph<T>, BuildReport)> {
    let GraphSources { inventory, vocab } = sources;
    let lemmatizer = inventory.lemmatizer();
    let mut report = BuildReport::default();

    let mut global_words: Vec<String> = vocab.words().iter().map(|e| e.form.clone()).collect();
    let mut seen: BTreeSet<String> = global_words.iter().cloned().collect();
    for w in inventory.words.keys() {
        if seen.insert(w.clone()) {
            global_words.push(w.clone());
        }
    }
    let first_form = global_words.len();
    let mut inflected: BTreeMap<String, String> = vocab
        .forms()
        .iter()
        .map(|(f, &id)| (f.clone(), vocab.word(id).form.clone()))
        .collect();
    for form in inventory.lemma_exceptions.keys() {
        let lemma = lemmatizer.normalize(form);
        if lemma != *form && seen.contains(&lemma) {
            inflected.entry(form.clone()).or_insert(lemma);
        }
    }
    for f in inflected.keys() {
        if seen.insert(f.clone()) {
            global_words.push(f.clone());
        }
    }

    let gloss_words: BTreeSet<String> = inventory
        .words
        .values()
        .flat_map(|w| &w.senses)
        .flat_map(|s| s.definitions.iter().chain(&s.examples))
        .flat_map(|g| gloss_tokens(g))
        .collect();
    report.generated_vectors = vectors.fill_missing(
        std::iter::once(UNK)
            .chain(global_words.iter().map(String::as_str))
            .chain(gloss_words.iter().map(String::as_str)),
        seed,
    );

    let mut g = DictGraph::new(vectors.dim())?;
    for w in &global_words {
        g.add_node(NodeKind::Global, w.clone(), vectors.get_or_unk(w)?.to_vec())?;
    }

    let index = inventory.sense_index();
    for (gid, word) in global_words.iter().enumerate().take(first_form) {
        let mut keys: Vec<&str> = inventory
            .words
            .get(word)
            .map(|r| r.senses.iter().map(|s| s.key.as_str()).collect())
            .unwrap_or_default();
        if gid < vocab.num_words() {
            for &s in vocab.senses_of(WordId(gid)) {
                let key = vocab.sense(s).key.as_str();
                if !keys.contains(&key) {
                    keys.push(key);
                }
            }
        }
        for key in keys {
            let sid = match g.sense_node(key) {
                Some(id) => id,
                None => {
                    let record = index.get(key).map(|&(_, r)| r);
                    let glosses: Vec<(NodeKind, &String, Vec<String>)> = record
                        .into_iter()
                        .flat_map(|r| {
                            r.definitions
                                .iter()
                                .map(|d| (NodeKind::Definition, d))
                                .chain(r.examples.iter().map(|e| (NodeKind::Example, e)))
                        })
                        .filter_map(|(k, text)| {
                            let toks = gloss_tokens(text);
                            if toks.is_empty() {
                                report.empty_glosses += 1;
                                None
                            } else {
                                Some((k, text, toks))
                            }
                        })
                        .collect();
                    let embeds = glosses
                        .iter()
                        .map(|(_, _, toks)| sentence_embed(toks, vectors))
                        .collect::<Result<Vec<_>>>()?;
                    let vector = if is_dummy_key(key) || embeds.is_empty() {
                        if !is_dummy_key(key) {
                            report.fallback_senses.push(key.to_string());
                        }
                        g.vector(gid).to_vec()
                    } else {
                        let n = T::lit(embeds.len() as f64);
                        (0..vectors.dim())
                            .map(|c| embeds.iter().map(|e| e[c]).sum::<T>() / n)
                            .collect()
                    };
                    let sid = g.add_node(NodeKind::Sense, key, vector)?;
                    for ((kind, text, _), embed) in glosses.into_iter().zip(embeds) {
                        let nid = g.add_node(kind, text.clone(), embed)?;
                        let rel = if kind == NodeKind::Definition { Relation::HasDefinition } else { Relation::HasExample };
                        g.add_edge(sid, nid, rel)?;
                    }
                    sid
                }
            };
            g.add_edge(gid, sid, Relation::HasSense)?;
        }
    }

    for (word, rec) in &inventory.words {
        for s in &rec.senses {
            for (targets, rel) in [(&s.synonyms, Relation::Synonym), (&s.antonyms, Relation::Antonym)] {
                for t in targets {
                    let (Some(a), Some(b)) = (g.sense_node(&s.key), g.sense_node(t)) else { continue };
                    if a != b {
                        g.add_edge(a, b, rel)?;
                    }
                    let owner = index[t.as_str()].0;
                    let (ga, gb) = (g.global(word).expect("headword node"), g.global(owner).expect("headword node"));
                    if ga != gb {
                        g.add_edge(ga, gb, rel)?;
                    }
                }
            }
        }
    }
    for (form, lemma) in &inflected {
        let (Some(f), Some(l)) = (g.global(form), g.global(lemma)) else { continue };
        if f != l {
            g.add_edge(f, l, Relation::LemmaOf)?;
        }
    }
    g.set_word_nodes((0..vocab.num_words()).collect())?;
    g.check_invariants()?;

    report.nodes = g.num_nodes();
    report.edges = g.num_edges();
    report.global_nodes = g.count_kind(NodeKind::Global);
    report.sense_nodes = g.count_kind(NodeKind::Sense);
    report.definition_nodes = g.count_kind(NodeKind::Definition);
    report.example_nodes = g.count_kind(NodeKind::Example);
    for e in g.edges() {
        let name = serde_json::to_value(e.relation)?.as_str().unwrap_or_default().to_string();
        *report.edges_by_relation.entry(name).or_default() += 1;
    }
    report.max_area_nodes = (0..vocab.num_words())
        .map(|w| g.area_for_word(WordId(w), MAX_AREA_NODES).map(|a| a.len()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(0);
    Ok((g, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, parse_labelled};

    const INV: &str = r#"{
        "lemma_exceptions": {"sat": "sit"},
        "bank": {"senses": [
            {"key": "bank.n.01", "definitions": ["sloping land"], "examples": ["river bank"]},
            {"key": "bank.n.02", "definitions": ["money place"], "synonyms": ["depository.n.01"]}
        ]},
        "depository": {"senses": [{"key": "depository.n.01", "definitions": ["money place"]}]},
        "sit": {"senses": [{"key": "sit.v.01"}]}
    }"#;

    fn setup() -> (Inventory, Vocabulary, WordVectors<f64>) {
        let inv = Inventory::from_json(INV).unwrap();
        let lem = inv.lemmatizer();
        let corpus = parse_labelled(
            r#"{"tokens": ["for", "the", "bank", "sat"], "senses": [null, null, "bank.n.01", "sit.v.01"]}
{"tokens": ["for", "the", "bank", "sat"], "senses": [null, null, "bank.n.02", "sit.v.01"]}"#,
        )
        .unwrap();
        let vocab = build_vocab(&[], &corpus, 1, &lem).unwrap();
        let vectors = WordVectors::parse("<unk> 0 0\nfor 1 2\nsloping 1 0\nland 0 1\nriver 2 2\n").unwrap();
        (inv, vocab, vectors)
    }

    fn build() -> (DictGraph<f64>, BuildReport, Vocabulary, WordVectors<f64>) {
        let (inv, vocab, mut vectors) = setup();
        let (g, r) = build_graph(
            GraphSources {
                inventory: &inv,
                vocab: &vocab,
            },
            &mut vectors,
            7,
        )
        .unwrap();
        (g, r, vocab, vectors)
    }

    #[test]
    fn vocab_words_keep_their_ids() {
        let (g, _, vocab, _) = build();
        for e in vocab.words() {
            assert_eq!(g.node(e.id.0).label, e.form);
            assert_eq!(g.node(e.id.0).kind, NodeKind::Global);
        }
    }

    #[test]
    fn sense_vector_is_mean_of_glosses() {
        let (g, _, _, v) = build();
        let s = g.sense_node("bank.n.01").unwrap();
        let d = sentence_embed(&["sloping", "land"], &v).unwrap();
        let e = sentence_embed(&["river", "bank"], &v).unwrap();
        for c in 0..2 {
            assert!((g.vector(s)[c] - (d[c] + e[c]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dummy_sense_takes_word_vector() {
        let (g, _, _, _) = build();
        let s = g.sense_node("for.dummySense.01").unwrap();
        assert_eq!(g.vector(s), &[1.0, 2.0]);
    }

    #[test]
    fn polysemous_word_has_two_sense_edges() {
        let (g, _, _, _) = build();
        let bank = g.global("bank").unwrap();
        let senses = g.neighbours(bank).filter(|&j| g.node(j).kind == NodeKind::Sense).count();
        assert_eq!(senses, 2);
    }

    #[test]
    fn glossless_sense_is_reported() {
        let (g, r, _, _) = build();
        assert_eq!(r.fallback_senses, vec!["sit.v.01".to_string()]);
        let sit = g.global("sit").unwrap();
        assert_eq!(g.vector(g.sense_node("sit.v.01").unwrap()), g.vector(sit));
    }

    #[test]
    fn synonyms_link_senses_and_globals() {
        let (g, r, _, _) = build();
        let a = g.sense_node("bank.n.02").unwrap();
        let b = g.sense_node("depository.n.01").unwrap();
        assert!(g.neighbours(a).any(|j| j == b));
        assert!(g.neighbours(g.global("bank").unwrap()).any(|j| j == g.global("depository").unwrap()));
        assert_eq!(r.edges_by_relation["synonym"], 2);
    }

    #[test]
    fn inflected_form_links_to_lemma() {
        let (g, _, _, _) = build();
        let sat = g.global("sat").unwrap();
        assert_eq!(g.neighbours(sat).collect::<Vec<_>>(), vec![g.global("sit").unwrap()]);
    }

    #[test]
    fn missing_vectors_are_generated_deterministically() {
        let (g1, r, _, v1) = build();
        let (g2, _, _, v2) = build();
        assert!(r.generated_vectors > 0);
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }
}
