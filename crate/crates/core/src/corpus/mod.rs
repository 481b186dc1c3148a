//! JSON Lines file formats and the synthetic corpus generator.
//!
//! - Corpus: one [`CasePair`] per line.
//! - Decision log: a header line `{"dimension", "categories", "importance_rank"}`
//!   followed by one [`DecisionRecord`] per line.
//! - Decisions: one human, machine or fused decision per line.

pub mod synthetic;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    normalize_distribution, CasePair, CategorySet, DecisionLog, DecisionRecord, Validate, ValidationContext,
    ValidationReport, Violation,
};

pub use synthetic::{gen_synthetic, GeneratorMode, GeneratorSpec, SyntheticData, SyntheticTruth};

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    std::fs::File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_line<T: DeserializeOwned>(lineno: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::format(lineno, e.to_string()))
}

fn prefixed(lineno: usize, report: ValidationReport) -> Error {
    Error::Validation(ValidationReport {
        violations: report
            .violations
            .into_iter()
            .map(|v| Violation {
                path: if v.path.is_empty() { format!("line {lineno}") } else { format!("line {lineno}: {}", v.path) },
                message: v.message,
            })
            .collect(),
    })
}

/// Read one JSON value per non-blank line.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    lines(path)?.into_iter().map(|(n, l)| parse_line(n, &l)).collect()
}

/// Write one JSON value per line.
pub fn save_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: &Path) -> Result<Vec<CasePair>> {
    let lines = lines(path)?;
    if lines.is_empty() {
        log::warn!("corpus {} is empty", path.display());
    }
    let mut pairs = Vec::with_capacity(lines.len());
    for (n, line) in lines {
        let pair: CasePair = parse_line(n, &line)?;
        let report = pair.validate();
        if !report.is_empty() {
            return Err(prefixed(n, report));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn save_corpus(pairs: &[CasePair], path: &Path) -> Result<()> {
    save_jsonl(pairs, path)
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    dimension: usize,
    categories: Vec<String>,
    #[serde(default)]
    importance_rank: Option<Vec<usize>>,
}

pub fn load_decision_log(path: &Path) -> Result<DecisionLog> {
    let lines = lines(path)?;
    let (first, rest) = lines
        .split_first()
        .ok_or_else(|| Error::format(None, format!("{} is empty; expected a header line", path.display())))?;
    let header: LogHeader = parse_line(first.0, &first.1)?;
    let category_set = match header.importance_rank {
        Some(r) => CategorySet::with_ranks(header.categories, r),
        None => CategorySet::new(header.categories),
    }
    .map_err(|e| Error::format(first.0, format!("invalid header: {e}")))?;
    let ctx = ValidationContext { categories: Some(category_set.len()), dimension: None };
    let mut records = Vec::with_capacity(rest.len());
    for (n, line) in rest {
        let mut r: DecisionRecord = parse_line(*n, line)?;
        if r.embedding.len() != header.dimension {
            return Err(Error::format(
                *n,
                format!("embedding dimension {} ≠ header dimension {}", r.embedding.len(), header.dimension),
            ));
        }
        let report = r.validate_with(&ctx);
        if !report.is_empty() {
            return Err(prefixed(*n, report));
        }
        normalize_distribution(&mut r.machine_probs).map_err(|m| Error::format(*n, m))?;
        records.push(r);
    }
    if records.is_empty() {
        log::warn!("decision log {} has no records", path.display());
    }
    Ok(DecisionLog { dimension: header.dimension, category_set, records })
}

pub fn save_decision_log(log: &DecisionLog, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let header = LogHeader {
        dimension: log.dimension,
        categories: log.category_set.names.clone(),
        importance_rank: Some(log.category_set.importance_rank.clone()),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for r in &log.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write a value as pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(e.line(), e.to_string()))
}
