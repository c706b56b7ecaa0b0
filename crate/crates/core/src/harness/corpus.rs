use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::tokenize;
use crate::model::Vocab;
use crate::train::Example;

/// The toy corpus shipped with the crate.
pub const BUNDLED_CORPUS: &str = include_str!("../../data/toy_corpus.jsonl");
pub const BUNDLED_CORPUS_LEN: usize = 64;
pub const BUNDLED_CORPUS_NAME: &str = "<bundled toy corpus>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub prompt: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl CorpusRecord {
    /// The metadata difficulty, or the token count of prompt and response.
    pub fn difficulty_or_length(&self) -> f64 {
        self.difficulty
            .unwrap_or_else(|| (tokenize(&self.prompt).len() + tokenize(&self.response).len()) as f64)
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading corpus {}", path.display()), e))?;
    parse_corpus(&text, &path.display().to_string())
}

pub fn bundled_corpus() -> Vec<CorpusRecord> {
    parse_corpus(BUNDLED_CORPUS, BUNDLED_CORPUS_NAME).expect("bundled corpus parses")
}

/// One JSON object per non-blank line. Missing difficulties are filled with the token count.
pub fn parse_corpus(text: &str, source: &str) -> Result<Vec<CorpusRecord>> {
    let err = |line: usize, msg: String| Error::Corpus {
        path: source.into(),
        line,
        msg,
    };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut rec: CorpusRecord = serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
        if rec.id.trim().is_empty() {
            return Err(err(line, "empty id".into()));
        }
        if tokenize(&rec.prompt).is_empty() {
            return Err(err(line, format!("record {:?} has an empty prompt", rec.id)));
        }
        if tokenize(&rec.response).is_empty() {
            return Err(err(line, format!("record {:?} has an empty response", rec.id)));
        }
        if let Some(d) = rec.difficulty {
            if !d.is_finite() {
                return Err(err(line, format!("record {:?} has a non-finite difficulty", rec.id)));
            }
        }
        if !seen.insert(rec.id.clone()) {
            return Err(err(line, format!("duplicate id {:?}", rec.id)));
        }
        rec.difficulty = Some(rec.difficulty_or_length());
        out.push(rec);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(format!("writing corpus {}", path.display()), e))
}

pub fn build_vocab(records: &[CorpusRecord]) -> Vocab {
    Vocab::build(records.iter().flat_map(|r| [r.prompt.as_str(), r.response.as_str()]))
}

pub fn to_examples(records: &[CorpusRecord], vocab: &Vocab) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| Example::new(vocab, &r.id, &r.prompt, &r.response, r.difficulty_or_length()))
        .collect()
}
