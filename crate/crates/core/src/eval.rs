//! Perplexity, the three accuracy metrics and the report/table formats.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenStream, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::senselm::{SenseStep, SenseVariant};
use crate::standardlm::PredictionStep;

/// `exp(-mean(ln p))`.
pub fn perplexity<T: Scalar>(probs: &[T]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Empty("probability sequence"));
    }
    let mut total = 0.0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p <= 0.0 || p.is_nan() {
            return Err(Error::ZeroProbability(i));
        }
        total += p.ln();
    }
    Ok((-total / probs.len() as f64).exp())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub correct: usize,
    pub total: usize,
}

impl Count {
    fn add(&mut self, ok: bool) {
        self.correct += ok as usize;
        self.total += 1;
    }

    /// `None` when there were no positions.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyCounts {
    /// Every position, dummy senses included.
    pub senses: Count,
    /// Positions whose true word has more than one non-dummy sense.
    pub polysem: Count,
    /// Top-1 next-word predictions.
    pub globals: Count,
}

/// Argmax accuracies at positions `1..n` of `stream`.
pub fn accuracy_suite<T: Scalar>(
    word_steps: &[PredictionStep<T>],
    sense_steps: &[SenseStep<T>],
    stream: &TokenStream,
    vocab: &Vocabulary,
) -> Result<AccuracyCounts> {
    let n = stream.len().saturating_sub(1);
    if word_steps.len() != n || sense_steps.len() != n {
        return Err(Error::Length(format!(
            "{} word and {} sense predictions for {n} positions",
            word_steps.len(),
            sense_steps.len()
        )));
    }
    let mut c = AccuracyCounts::default();
    for t in 0..n {
        let (w, s) = (stream.words()[t + 1], stream.senses()[t + 1]);
        let sense_ok = sense_steps[t].predicted == s;
        c.senses.add(sense_ok);
        if vocab.is_polysemous(w) {
            c.polysem.add(sense_ok);
        }
        c.globals.add(word_steps[t].argmax() == w.0);
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensePerplexity {
    pub value: f64,
    /// False for localized variants, whose ε floor dominates the value.
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub value: Option<f64>,
    pub correct: usize,
    pub total: usize,
}

impl From<Count> for Accuracy {
    fn from(c: Count) -> Self {
        Self {
            value: c.accuracy(),
            correct: c.correct,
            total: c.total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: SenseVariant,
    pub positions: usize,
    pub word_ppl: f64,
    pub sense_ppl: SensePerplexity,
    pub senses_acc: Accuracy,
    pub polysem_acc: Accuracy,
    pub globals_acc: Accuracy,
    /// Settings that produced the report.
    pub config: serde_json::Value,
}

pub fn evaluate<T: Scalar>(
    variant: SenseVariant,
    word_steps: &[PredictionStep<T>],
    sense_steps: &[SenseStep<T>],
    stream: &TokenStream,
    vocab: &Vocabulary,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let counts = accuracy_suite(word_steps, sense_steps, stream, vocab)?;
    let word_p: Vec<T> = word_steps.iter().zip(&stream.words()[1..]).map(|(s, w)| s.probs[w.0]).collect();
    let sense_p: Vec<T> = sense_steps.iter().zip(&stream.senses()[1..]).map(|(s, t)| s.probs[t.0]).collect();
    Ok(EvalReport {
        variant,
        positions: word_steps.len(),
        word_ppl: perplexity(&word_p)?,
        sense_ppl: SensePerplexity {
            value: perplexity(&sense_p)?,
            significant: !variant.is_localized(),
        },
        senses_acc: counts.senses.into(),
        polysem_acc: counts.polysem.into(),
        globals_acc: counts.globals.into(),
        config,
    })
}

const HEADER: [&str; 8] = ["Method", "LM", "K", "Senses ACC", "Polysem ACC", "Globals ACC", "Words PPL", "Senses PPL"];
const WIDTHS: [usize; 8] = [18, 12, 3, 11, 11, 11, 10, 12];

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

fn line(cells: &[String]) -> String {
    let mut out = String::new();
    for (i, (c, w)) in cells.iter().zip(WIDTHS).enumerate() {
        if i > 0 {
            out.push_str("  ");
        }
        if i < 2 {
            write!(out, "{c:<w$}").expect("write to string");
        } else {
            write!(out, "{c:>w$}").expect("write to string");
        }
    }
    out.trim_end().to_string()
}

pub fn table_header() -> String {
    line(&HEADER.map(String::from))
}

/// One aligned row; the LM kind and K are read from the config echo.
pub fn table_row(r: &EvalReport) -> String {
    let lm = r.config.get("lm").and_then(|v| v.as_str()).unwrap_or("-").to_string();
    let k = r.config.get("k").and_then(|v| v.as_u64()).map_or("-".into(), |k| k.to_string());
    let sense_ppl = if r.sense_ppl.significant {
        format!("{:.2}", r.sense_ppl.value)
    } else {
        "n.s.".into()
    };
    line(&[
        r.variant.name().to_string(),
        lm,
        k,
        cell(r.senses_acc.value),
        cell(r.polysem_acc.value),
        cell(r.globals_acc.value),
        format!("{:.2}", r.word_ppl),
        sense_ppl,
    ])
}

pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = table_header();
    for r in reports {
        out.push('\n');
        out.push_str(&table_row(r));
    }
    out
}

/// Published numbers from full SemCor training, kept for comparison only.
/// Nothing here is reproducible on the toy data.
pub mod reference {
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct Reference {
        pub run: &'static str,
        pub metric: &'static str,
        pub value: f64,
    }

    const fn r(run: &'static str, metric: &'static str, value: f64) -> Reference {
        Reference { run, metric, value }
    }

    pub const SEMCOR: &[Reference] = &[
        r("mfs gold", "senses_acc", 0.83),
        r("mfs gold", "polysem_acc", 0.62),
        r("selectk gold k=1", "senses_acc", 0.90),
        r("selectk gold k=1", "polysem_acc", 0.80),
        r("two grus", "senses_ppl", 562.46),
        r("two grus", "senses_acc", 0.053),
        r("two transformers", "words_ppl", 128.99),
        r("two transformers", "words_acc", 0.241),
        r("two transformers", "senses_ppl", 186.72),
        r("two transformers", "senses_acc", 0.217),
    ];

    pub fn lookup(run: &str, metric: &str) -> Option<f64> {
        SEMCOR.iter().find(|x| x.run == run && x.metric == metric).map(|x| x.value)
    }
}
