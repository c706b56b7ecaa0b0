use std::collections::HashSet;

use super::tokenize;
use crate::error::{Error, Result};

pub fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = &[String]> {
    tokens.windows(n.max(1)).filter(move |_| n >= 1)
}

fn check_n(n: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::invalid("distinct_n", "n must be at least 1"));
    }
    Ok(())
}

/// Unique n-grams over all n-grams, pooled across every text. 0 when no text has n tokens.
pub fn distinct_n<S: AsRef<str>>(texts: &[S], n: usize) -> Result<f64> {
    check_n(n)?;
    let toks: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref())).collect();
    let mut seen: HashSet<&[String]> = HashSet::new();
    let mut total = 0usize;
    for t in &toks {
        for g in ngrams(t, n) {
            total += 1;
            seen.insert(g);
        }
    }
    Ok(if total == 0 { 0.0 } else { seen.len() as f64 / total as f64 })
}

/// Mean of per-text distinct-n, skipping texts shorter than n.
pub fn distinct_n_per_response<S: AsRef<str>>(texts: &[S], n: usize) -> Result<f64> {
    check_n(n)?;
    let scores: Vec<f64> = texts
        .iter()
        .filter(|t| tokenize(t.as_ref()).len() >= n)
        .map(|t| distinct_n(std::slice::from_ref(t), n))
        .collect::<Result<_>>()?;
    Ok(if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 })
}
