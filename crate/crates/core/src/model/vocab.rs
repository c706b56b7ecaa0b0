use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::metrics::tokenize;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const SEP: &str = "<sep>";
pub const EOS: &str = "<eos>";

/// Word-level vocabulary over the metric tokenizer (lowercase, whitespace split).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        Self::from_words(words)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Special tokens first, then words in order of first appearance.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::from_words([PAD, UNK, BOS, SEP, EOS].map(String::from).to_vec());
        for text in texts {
            for tok in tokenize(text) {
                if !v.index.contains_key(&tok) {
                    v.index.insert(tok.clone(), v.words.len());
                    v.words.push(tok);
                }
            }
        }
        v
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    fn special(&self, w: &str) -> usize {
        self.id(w).expect("special token present")
    }

    pub fn pad(&self) -> usize {
        self.special(PAD)
    }
    pub fn unk(&self) -> usize {
        self.special(UNK)
    }
    pub fn bos(&self) -> usize {
        self.special(BOS)
    }
    pub fn sep(&self) -> usize {
        self.special(SEP)
    }
    pub fn eos(&self) -> usize {
        self.special(EOS)
    }

    /// Unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or_else(|| self.unk()))
            .collect()
    }

    pub fn count_unknown(&self, text: &str) -> usize {
        tokenize(text).iter().filter(|t| self.id(t).is_none()).count()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.words.get(i).map_or(UNK, String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
