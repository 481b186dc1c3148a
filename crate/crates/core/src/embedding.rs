//! Sentence-in-context embeddings.
//!
//! The built-in embedder feature-hashes token n-grams of a sentence and its
//! `L` neighbours on each side (truncated at document boundaries) into a
//! fixed-dimension signed count vector, then L2-normalizes it. Precomputed
//! vectors from any other encoder can be imported from JSON Lines.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Document, SentenceRef};
use crate::rng::fnv1a;
use crate::EmbeddingMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dimension: usize,
    /// Sentences of context on each side.
    pub context_window: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dimension: 256,
            context_window: 2,
            ngram_min: 1,
            ngram_max: 3,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn check(&self) -> Result<()> {
        if self.dimension < 8 {
            return Err(Error::Config(format!("embedding dimension {} < 8", self.dimension)));
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(Error::Config(format!(
                "invalid n-gram range ({}, {})",
                self.ngram_min, self.ngram_max
            )));
        }
        Ok(())
    }
}

/// Lowercased alphanumeric tokens; everything else separates.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Feature-hash a token stream. Returns the raw (unnormalized) vector.
fn hash_tokens(tokens: &[String], cfg: &EmbeddingConfig) -> Vec<f64> {
    let mut v = vec![0.0; cfg.dimension];
    let mut gram = String::new();
    for n in cfg.ngram_min..=cfg.ngram_max {
        for window in tokens.windows(n) {
            gram.clear();
            for (i, t) in window.iter().enumerate() {
                if i > 0 {
                    gram.push(' ');
                }
                gram.push_str(t);
            }
            let h = fnv1a(cfg.seed, gram.as_bytes());
            let slot = (h % cfg.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
    }
    v
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Embed sentence `index` of `doc` together with its context window.
///
/// A window with no tokens yields the all-zero vector; prototype assignment
/// flags such vectors as degenerate.
pub fn embed_sentence(doc: &Document, index: usize, cfg: &EmbeddingConfig) -> Result<Vec<f64>> {
    cfg.check()?;
    if index >= doc.sentences.len() {
        return Err(Error::Range(format!(
            "sentence {index} out of range for document {} with {} sentences",
            doc.doc_id,
            doc.sentences.len()
        )));
    }
    let lo = index.saturating_sub(cfg.context_window);
    let hi = (index + cfg.context_window).min(doc.sentences.len() - 1);
    let tokens: Vec<String> = doc.sentences[lo..=hi]
        .iter()
        .flat_map(|s| tokenize(&s.text))
        .collect();
    let mut v = hash_tokens(&tokens, cfg);
    l2_normalize(&mut v);
    Ok(v)
}

/// Embed every sentence of every document.
pub fn embed_corpus(docs: &[&Document], cfg: &EmbeddingConfig) -> Result<EmbeddingMap> {
    cfg.check()?;
    let jobs: Vec<(&Document, usize)> = docs
        .iter()
        .flat_map(|d| (0..d.sentences.len()).map(move |i| (*d, i)))
        .collect();
    let vectors = jobs
        .par_iter()
        .map(|(d, i)| embed_sentence(d, *i, cfg).map(|v| (SentenceRef::new(d.doc_id.clone(), *i), v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(vectors.into_iter().collect())
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRow {
    doc_id: String,
    index: usize,
    vector: Vec<f64>,
}

/// Read precomputed vectors: one `{"doc_id", "index", "vector"}` object per line.
pub fn import_embeddings(path: &Path, expected_dimension: usize) -> Result<EmbeddingMap> {
    read_rows(path, Some(expected_dimension))
}

/// Like [`import_embeddings`], taking the dimension from the first row.
pub fn import_embeddings_any(path: &Path) -> Result<EmbeddingMap> {
    read_rows(path, None)
}

fn read_rows(path: &Path, mut expected: Option<usize>) -> Result<EmbeddingMap> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow =
            serde_json::from_str(&line).map_err(|e| Error::format(lineno, e.to_string()))?;
        let expected_dimension = *expected.get_or_insert(row.vector.len());
        if row.vector.len() != expected_dimension {
            return Err(Error::format(
                lineno,
                format!(
                    "row {lineno} ({}#{}) has dimension {}, expected {expected_dimension}",
                    row.doc_id,
                    row.index,
                    row.vector.len()
                ),
            ));
        }
        if row.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::format(lineno, "non-finite vector component"));
        }
        let key = SentenceRef::new(row.doc_id, row.index);
        if out.contains_key(&key) {
            return Err(Error::format(lineno, format!("duplicate sentence {key}")));
        }
        out.insert(key, row.vector);
    }
    Ok(out)
}

/// Write vectors in the import format, ordered by sentence reference.
pub fn export_embeddings(path: &Path, embeddings: &EmbeddingMap) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (k, v) in embeddings {
        let row = EmbeddingRow {
            doc_id: k.doc_id.clone(),
            index: k.index,
            vector: v.clone(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Dimension shared by all vectors, if any.
pub fn dimension_of(embeddings: &EmbeddingMap) -> Option<usize> {
    embeddings.values().next().map(Vec::len)
}
