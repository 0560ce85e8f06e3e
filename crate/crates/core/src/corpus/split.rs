use rand::Rng as _;

use super::LabelledSentence;
use crate::tensor::seeded_rng;

/// Train/validation/test partition of a labelled corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<LabelledSentence>,
    pub valid: Vec<LabelledSentence>,
    pub test: Vec<LabelledSentence>,
}

/// 80/10/10 split over contiguous document spans.
///
/// Consecutive sentences sharing a `doc` value form a document; a sentence
/// without one is its own document. The document sequence is rotated by a
/// seeded offset and cut into three contiguous spans, so sentence order
/// within each span matches the corpus.
pub fn split_documents(sentences: &[LabelledSentence], seed: u64) -> Split {
    let mut docs: Vec<Vec<LabelledSentence>> = Vec::new();
    for s in sentences {
        let continues = matches!(
            (docs.last().and_then(|d| d.last()).and_then(|p| p.doc.as_ref()), s.doc.as_ref()),
            (Some(a), Some(b)) if a == b
        );
        if continues {
            docs.last_mut().expect("non-empty").push(s.clone());
        } else {
            docs.push(vec![s.clone()]);
        }
    }
    let n = docs.len();
    if n == 0 {
        return Split::default();
    }
    let offset = seeded_rng(seed).random_range(0..n);
    docs.rotate_left(offset);

    let (n_train, n_valid) = if n >= 3 {
        let valid = ((n as f64) * 0.1).round().max(1.0) as usize;
        let test = valid;
        (n - valid - test, valid)
    } else {
        (n, 0)
    };
    let mut it = docs.into_iter();
    let take = |it: &mut std::vec::IntoIter<Vec<LabelledSentence>>, k: usize| -> Vec<LabelledSentence> {
        it.by_ref().take(k).flatten().collect()
    };
    let train = take(&mut it, n_train);
    let valid = take(&mut it, n_valid);
    let test = it.flatten().collect();
    Split { train, valid, test }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(n: usize, per: usize) -> Vec<LabelledSentence> {
        (0..n * per)
            .map(|i| LabelledSentence {
                tokens: vec![format!("t{i}")],
                senses: vec![None],
                doc: Some(format!("d{}", i / per)),
            })
            .collect()
    }

    #[test]
    fn ten_documents_split_eight_one_one() {
        let s = split_documents(&docs(10, 6), 3);
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (48, 6, 6));
    }

    #[test]
    fn documents_stay_whole_and_nothing_is_lost() {
        let all = docs(7, 3);
        let s = split_documents(&all, 11);
        for part in [&s.train, &s.valid, &s.test] {
            for chunk in part.chunks(3) {
                assert!(chunk.iter().all(|x| x.doc == chunk[0].doc));
            }
        }
        assert_eq!(s.train.len() + s.valid.len() + s.test.len(), all.len());
    }

    #[test]
    fn seeded_split_is_reproducible() {
        assert_eq!(split_documents(&docs(10, 2), 5), split_documents(&docs(10, 2), 5));
    }
}
