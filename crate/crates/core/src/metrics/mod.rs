//! Text-generation metrics: ROUGE-1, ROUGE-L, distinct-n and exact-match accuracy.
//!
//! All scores use the same tokenizer (lowercase, whitespace split, punctuation left attached),
//! so they are comparable within this crate only.

mod distinct;
mod rouge;


pub use distinct::{distinct_n, distinct_n_per_response, ngrams};
pub use rouge::{lcs_len, rouge_1, rouge_1_tokens, rouge_l, rouge_l_tokens, Prf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedText {
    pub original: String,
    pub tokens: Vec<String>,
}

impl TokenizedText {
    pub fn new(text: &str) -> Self {
        TokenizedText {
            original: text.to_string(),
            tokens: tokenize(text),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn classification_accuracy<L: PartialEq>(predictions: &[L], labels: &[L]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(
            "classification_accuracy",
            format!("{} predictions for {} labels", predictions.len(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Err(Error::invalid("classification_accuracy", "no labels"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Aggregate scores over an eval set. ROUGE values are means over examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rouge1: Prf,
    pub rouge_l: Prf,
    pub distinct1: f64,
    pub distinct2: f64,
    pub accuracy: Option<f64>,
    pub examples: usize,
    pub labelled: usize,
    pub candidate_tokens: usize,
    pub rouge_variant: String,
}

impl MetricReport {
    /// `labels` pairs (predicted, gold) for the examples that carry a gold label.
    pub fn compute(candidates: &[&str], references: &[&str], labels: &[(String, String)]) -> Result<Self> {
        if candidates.len() != references.len() {
            return Err(Error::Eval(format!(
                "{} candidates for {} references",
                candidates.len(),
                references.len()
            )));
        }
        if candidates.is_empty() {
            return Err(Error::Eval("empty evaluation set".into()));
        }
        let n = candidates.len() as f64;
        let mut r1 = Prf::default();
        let mut rl = Prf::default();
        let mut tokens = 0;
        for (c, r) in candidates.iter().zip(references) {
            let (ct, rt) = (tokenize(c), tokenize(r));
            tokens += ct.len();
            r1 = r1.add(&rouge_1_tokens(&ct, &rt)?);
            rl = rl.add(&rouge_l_tokens(&ct, &rt)?);
        }
        let accuracy = if labels.is_empty() {
            None
        } else {
            let (p, g): (Vec<&String>, Vec<&String>) = labels.iter().map(|(p, g)| (p, g)).unzip();
            Some(classification_accuracy(&p, &g)?)
        };
        Ok(MetricReport {
            rouge1: r1.scale(1.0 / n),
            rouge_l: rl.scale(1.0 / n),
            distinct1: distinct_n(candidates, 1)?,
            distinct2: distinct_n(candidates, 2)?,
            accuracy,
            examples: candidates.len(),
            labelled: labels.len(),
            candidate_tokens: tokens,
            rouge_variant: "clipped counts, F1 with beta = 1".into(),
        })
    }
}
