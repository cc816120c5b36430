//! Corpora, task file formats, subsetting and multilingual batching.

mod conllu;
mod mixer;
mod tasks;
pub mod toy;

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use conllu::{parse_conllu, write_conllu, ConlluSentence, ConlluToken};
pub use mixer::{BatchMixer, MixedSample};
pub use tasks::{read_bio, read_cls_tsv, repair_bio, ClsExample, NerExample, NerFile};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("requested {requested} examples from {available}")]
    Size { requested: usize, available: usize },
    #[error("corpus `{lang}` ran out of samples")]
    ExhaustedCorpus { lang: String },
    #[error("invalid data configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn format_err(line: usize, msg: impl Into<String>) -> DataError {
    DataError::Format { line, msg: msg.into() }
}

/// One pretraining document.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub text: String,
    pub lang: String,
}

impl CorpusRecord {
    pub fn new(text: impl Into<String>, lang: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            lang: lang.into(),
        }
    }
}

/// Reads one JSON object `{"text": …, "lang": …}` per line; blank lines are
/// skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<CorpusRecord>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| format_err(n, e.to_string()))?;
        if rec.lang.trim().is_empty() {
            return Err(format_err(n, "empty lang"));
        }
        if rec.text.trim().is_empty() {
            return Err(format_err(n, "empty text"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut w: W, records: &[CorpusRecord]) -> Result<(), DataError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| DataError::Config(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Groups records by language, languages in order of first appearance.
pub fn group_by_lang(records: Vec<CorpusRecord>) -> Vec<(String, Vec<CorpusRecord>)> {
    let mut groups: Vec<(String, Vec<CorpusRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(l, _)| *l == r.lang) {
            Some((_, v)) => v.push(r),
            None => groups.push((r.lang.clone(), vec![r])),
        }
    }
    groups
}

/// Uniform sample of `size` items without replacement, kept in their
/// original order.
pub fn subsample<T: Clone>(items: &[T], size: usize, seed: u64) -> Result<Vec<T>, DataError> {
    if size > items.len() {
        return Err(DataError::Size {
            requested: size,
            available: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, items.len(), size).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| items[i].clone()).collect())
}

#[cfg(test)]
mod tests;
