use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_matches(matches: usize, cand_len: usize, ref_len: usize) -> Prf {
        if matches == 0 || cand_len == 0 {
            return Prf::default();
        }
        let p = matches as f64 / cand_len as f64;
        let r = matches as f64 / ref_len as f64;
        Prf {
            precision: p,
            recall: r,
            f1: 2.0 * p * r / (p + r),
        }
    }

    pub(crate) fn add(&self, o: &Prf) -> Prf {
        Prf {
            precision: self.precision + o.precision,
            recall: self.recall + o.recall,
            f1: self.f1 + o.f1,
        }
    }

    pub(crate) fn scale(&self, s: f64) -> Prf {
        Prf {
            precision: self.precision * s,
            recall: self.recall * s,
            f1: self.f1 * s,
        }
    }
}

fn check_reference(op: &'static str, reference: &[String]) -> Result<()> {
    if reference.is_empty() {
        return Err(Error::invalid(op, "empty reference"));
    }
    Ok(())
}

pub fn rouge_1(candidate: &str, reference: &str) -> Result<Prf> {
    rouge_1_tokens(&tokenize(candidate), &tokenize(reference))
}

pub fn rouge_1_tokens(candidate: &[String], reference: &[String]) -> Result<Prf> {
    check_reference("rouge_1", reference)?;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t).or_default() += 1;
    }
    let mut matches = 0;
    for t in candidate {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                matches += 1;
            }
        }
    }
    Ok(Prf::from_matches(matches, candidate.len(), reference.len()))
}

pub fn rouge_l(candidate: &str, reference: &str) -> Result<Prf> {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> Result<Prf> {
    check_reference("rouge_l", reference)?;
    Ok(Prf::from_matches(lcs_len(candidate, reference), candidate.len(), reference.len()))
}

/// Longest common subsequence length, O(|a|·|b|) time with a single rolling row.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}
