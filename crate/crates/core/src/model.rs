//! Shared domain types.
//!
//! Every type here is plain data with serde support and a [`Validate`]
//! implementation that collects invariant violations instead of aborting.
//! Probabilities are checked against [`PROB_TOL`]; loaders renormalize vectors
//! that are within tolerance and reject the rest.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for every "sums to one" check.
pub const PROB_TOL: f64 = 1e-9;

/// Name of the reserved category at index 0.
pub const NOT_KEY: &str = "Not Key";

// ---------------------------------------------------------------------------
// Validation plumbing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{}: {}", v.path, v.message))
            .collect();
        f.write_str(&parts.join("; "))
    }
}

/// Context for checks that depend on the surrounding container.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationContext {
    /// Number of categories C, when known.
    pub categories: Option<usize>,
    /// Embedding dimension, when known.
    pub dimension: Option<usize>,
}

pub trait Validate {
    fn validate_into(&self, path: &str, ctx: &ValidationContext, out: &mut Vec<Violation>);

    fn validate(&self) -> ValidationReport {
        self.validate_with(&ValidationContext::default())
    }

    fn validate_with(&self, ctx: &ValidationContext) -> ValidationReport {
        let mut violations = Vec::new();
        self.validate_into("", ctx, &mut violations);
        ValidationReport { violations }
    }
}

fn push(out: &mut Vec<Violation>, path: &str, field: &str, message: impl Into<String>) {
    let path = match (path.is_empty(), field.is_empty()) {
        (true, _) => field.to_string(),
        (false, true) => path.to_string(),
        (false, false) => format!("{path}.{field}"),
    };
    out.push(Violation {
        path,
        message: message.into(),
    });
}

fn check_distribution(
    probs: &[f64],
    path: &str,
    field: &str,
    ctx: &ValidationContext,
    out: &mut Vec<Violation>,
) {
    if let Some(c) = ctx.categories {
        if probs.len() != c {
            push(out, path, field, format!("length {} != C = {c}", probs.len()));
        }
    }
    if probs.is_empty() {
        push(out, path, field, "empty distribution");
        return;
    }
    if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
        push(out, path, field, format!("entry {i} is negative or non-finite"));
        return;
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        push(out, path, field, format!("probs sum {sum} ≠ 1"));
    }
}

/// Check a probability vector and rescale it to sum exactly to one.
///
/// Vectors further than [`PROB_TOL`] from the simplex are rejected.
pub fn normalize_distribution(probs: &mut [f64]) -> std::result::Result<(), String> {
    if probs.is_empty() {
        return Err("empty distribution".into());
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("negative or non-finite probability".into());
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(format!("probs sum {sum} ≠ 1"));
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(())
}

/// Index of the largest entry, ties broken towards the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Categories and text
// ---------------------------------------------------------------------------

/// The C sentence categories. Index 0 is always "Not Key" with importance rank 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySet {
    pub count: usize,
    pub names: Vec<String>,
    pub importance_rank: Vec<usize>,
}

impl CategorySet {
    /// Categories named `names[0..]` with importance increasing by index.
    pub fn new(names: Vec<String>) -> Result<Self> {
        let set = CategorySet {
            count: names.len(),
            importance_rank: (0..names.len()).collect(),
            names,
        };
        set.validate().into_result()?;
        Ok(set)
    }

    pub fn with_ranks(names: Vec<String>, importance_rank: Vec<usize>) -> Result<Self> {
        let set = CategorySet {
            count: names.len(),
            names,
            importance_rank,
        };
        set.validate().into_result()?;
        Ok(set)
    }

    /// "Not Key" followed by `Key 1 .. Key C-1`.
    pub fn generic(count: usize) -> Result<Self> {
        let mut names = vec![NOT_KEY.to_string()];
        names.extend((1..count).map(|i| format!("Key {i}")));
        Self::new(names)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn rank(&self, label: usize) -> usize {
        self.importance_rank[label]
    }
}

impl Validate for CategorySet {
    fn validate_into(&self, path: &str, _ctx: &ValidationContext, out: &mut Vec<Violation>) {
        if self.count < 2 {
            push(out, path, "count", format!("C = {} < 2", self.count));
        }
        if self.names.len() != self.count {
            push(out, path, "names", format!("{} names for C = {}", self.names.len(), self.count));
        }
        if self.names.iter().any(|n| n.trim().is_empty()) {
            push(out, path, "names", "empty category name");
        }
        let unique: BTreeSet<&String> = self.names.iter().collect();
        if unique.len() != self.names.len() {
            push(out, path, "names", "duplicate category names");
        }
        if self.names.first().map(String::as_str) != Some(NOT_KEY) {
            push(out, path, "names[0]", format!("index 0 must be \"{NOT_KEY}\""));
        }
        if self.importance_rank.len() != self.count {
            push(out, path, "importance_rank", "length differs from C");
        } else {
            let mut sorted = self.importance_rank.clone();
            sorted.sort_unstable();
            if sorted != (0..self.count).collect::<Vec<_>>() {
                push(out, path, "importance_rank", "not a permutation of 0..C-1");
            }
            if self.importance_rank.first() != Some(&0) {
                push(out, path, "importance_rank[0]", "rank of Not Key must be 0");
            }
        }
    }
}

/// Reference to one sentence: document id plus position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceRef {
    pub doc_id: String,
    pub index: usize,
}

impl SentenceRef {
    pub fn new(doc_id: impl Into<String>, index: usize) -> Self {
        SentenceRef {
            doc_id: doc_id.into(),
            index,
        }
    }
}

impl fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    #[serde(rename = "label", default)]
    pub true_label: Option<usize>,
}

impl Sentence {
    pub fn sentence_ref(&self) -> SentenceRef {
        SentenceRef::new(self.doc_id.clone(), self.index)
    }
}

/// An ordered list of sentences. On the wire the per-sentence doc id and index
/// are implied by the enclosing document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "DocumentWire", into = "DocumentWire")]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Serialize, Deserialize)]
struct DocumentWire {
    doc_id: String,
    sentences: Vec<SentenceWire>,
}

#[derive(Serialize, Deserialize)]
struct SentenceWire {
    text: String,
    #[serde(default)]
    label: Option<usize>,
}

impl From<DocumentWire> for Document {
    fn from(w: DocumentWire) -> Self {
        let sentences = w
            .sentences
            .into_iter()
            .enumerate()
            .map(|(index, s)| Sentence {
                doc_id: w.doc_id.clone(),
                index,
                text: s.text,
                true_label: s.label,
            })
            .collect();
        Document {
            doc_id: w.doc_id,
            sentences,
        }
    }
}

impl From<Document> for DocumentWire {
    fn from(d: Document) -> Self {
        DocumentWire {
            doc_id: d.doc_id,
            sentences: d
                .sentences
                .into_iter()
                .map(|s| SentenceWire {
                    text: s.text,
                    label: s.true_label,
                })
                .collect(),
        }
    }
}

impl Document {
    /// Build a document from texts and optional labels.
    pub fn from_texts<I, S>(doc_id: impl Into<String>, texts: I) -> Self
    where
        I: IntoIterator<Item = (S, Option<usize>)>,
        S: Into<String>,
    {
        let doc_id = doc_id.into();
        let sentences = texts
            .into_iter()
            .enumerate()
            .map(|(index, (text, label))| Sentence {
                doc_id: doc_id.clone(),
                index,
                text: text.into(),
                true_label: label,
            })
            .collect();
        Document { doc_id, sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn refs(&self) -> impl Iterator<Item = SentenceRef> + '_ {
        self.sentences.iter().map(Sentence::sentence_ref)
    }

    /// True labels, if every sentence carries one.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.sentences.iter().map(|s| s.true_label).collect()
    }
}

impl Validate for Document {
    fn validate_into(&self, path: &str, ctx: &ValidationContext, out: &mut Vec<Violation>) {
        if self.sentences.is_empty() {
            push(out, path, "sentences", "document has no sentences");
        }
        for (i, s) in self.sentences.iter().enumerate() {
            let sp = format!("{}sentences[{i}]", if path.is_empty() { String::new() } else { format!("{path}.") });
            if s.index != i {
                push(out, &sp, "index", format!("index {} at position {i}", s.index));
            }
            if s.doc_id != self.doc_id {
                push(out, &sp, "doc_id", "differs from parent document");
            }
            if let (Some(l), Some(c)) = (s.true_label, ctx.categories) {
                if l >= c {
                    push(out, &sp, "label", format!("label {l} ≥ C = {c}"));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePair {
    pub source: Document,
    pub target: Document,
    #[serde(rename = "relation", default)]
    pub true_relation: Option<usize>,
}

impl CasePair {
    pub fn documents(&self) -> [&Document; 2] {
        [&self.source, &self.target]
    }

    pub fn is_labeled(&self) -> bool {
        self.true_relation.is_some()
            && self.source.labels().is_some()
            && self.target.labels().is_some()
    }
}

impl Validate for CasePair {
    fn validate_into(&self, path: &str, ctx: &ValidationContext, out: &mut Vec<Violation>) {
        let sub = |f: &str| if path.is_empty() { f.to_string() } else { format!("{path}.{f}") };
        self.source.validate_into(&sub("source"), ctx, out);
        self.target.validate_into(&sub("target"), ctx, out);
        if self.source.doc_id == self.target.doc_id {
            push(out, path, "target.doc_id", "source and target share a doc_id");
        }
    }
}

// ---------------------------------------------------------------------------
// Decisions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanDecision {
    #[serde(flatten)]
    pub sentence_ref: SentenceRef,
    pub label: usize,
}

impl Validate for HumanDecision {
    fn validate_into(&self, path: &str, ctx: &ValidationContext, out: &mut Vec<Violation>) {
        if let Some(c) = ctx.categories {
            if self.label >= c {
                push(out, path, "label", format!("label {} ≥ C = {c}", self.label));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineDecision {
    #[serde(flatten)]
    pub sentence_ref: SentenceRef,
    pub probs: Vec<f64>,
}

impl MachineDecision {
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

impl Validate for MachineDecision {
    fn validate_into(&self, path: &str, ctx: &ValidationContext, out: &mut Vec<Violation>) {
        check_distribution(&self.probs, path, "probs", ctx, out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedDecision {
    #[serde(flatten)]
    pub sentence_ref: SentenceRef,
    pub posterior: Vec<f64>,
    pub argmax_label: usize,
    pub fallback_used: bool,
}

impl FusedDecision {
    pub fn new(sentence_ref: SentenceRef, posterior: Vec<f64>, fallback_used: bool) -> Self {
        FusedDecision {
            argmax_label: argmax(&posterior),
            sentence_ref,
            posterior,
            fallback_used,
        }
    }

    /// A decision that puts all mass on `label`.
    pub fn one_hot(sentence_ref: SentenceRef, label: usize, categories: usize) -> Self {
        let mut posterior = vec![0.0; categories];
        posterior[label] = 1.0;
        Self::new(sentence_ref, posterior, false)
    }
}

impl Validate for FusedDecision {
    fn validate_into(&self, path: &str, ctx: &ValidationContext, out: &mut Vec<Violation>) {
        check_distribution(&self.posterior, path, "posterior", ctx, out);
        if !self.posterior.is_empty() && self.argmax_label != argmax(&self.posterior) {
            push(out, path, "argmax_label", "does not match posterior argmax");
        }
    }
}

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

/// Column-stochastic C×C matrix: `entries[h][y] = p(H = h | y)`.
///
/// Construction always goes through [`ConfusionMatrix::new`], so every
/// instance has columns summing to one within [`PROB_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ConfusionMatrix {
    entries: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    /// Validate and column-renormalize `entries`.
    pub fn new(mut entries: Vec<Vec<f64>>) -> Result<Self> {
        let report = Self::check(&entries);
        if !report.is_empty() {
            return Err(Error::Validation(report));
        }
        let c = entries.len();
        for y in 0..c {
            let s: f64 = entries.iter().map(|row| row[y]).sum();
            for row in entries.iter_mut() {
                row[y] /= s;
            }
        }
        Ok(ConfusionMatrix { entries })
    }

    fn check(entries: &[Vec<f64>]) -> ValidationReport {
        let mut out = Vec::new();
        let c = entries.len();
        if c < 2 {
            push(&mut out, "", "entries", format!("{c}×{c} matrix; need C ≥ 2"));
        }
        if entries.iter().any(|row| row.len() != c) {
            push(&mut out, "", "entries", "matrix is not square");
            return ValidationReport { violations: out };
        }
        for (h, row) in entries.iter().enumerate() {
            for (y, v) in row.iter().enumerate() {
                if !v.is_finite() || *v < 0.0 || *v > 1.0 + PROB_TOL {
                    push(&mut out, "", &format!("entries[{h}][{y}]"), format!("{v} outside [0,1]"));
                }
            }
        }
        for y in 0..c {
            let s: f64 = entries.iter().map(|row| row[y]).sum();
            if (s - 1.0).abs() > PROB_TOL {
                push(&mut out, "", &format!("column {y}"), format!("sums to {s}, not 1"));
            }
        }
        ValidationReport { violations: out }
    }

    pub fn identity(c: usize) -> Self {
        let entries = (0..c)
            .map(|h| (0..c).map(|y| if h == y { 1.0 } else { 0.0 }).collect())
            .collect();
        ConfusionMatrix { entries }
    }

    pub fn uniform(c: usize) -> Self {
        ConfusionMatrix {
            entries: vec![vec![1.0 / c as f64; c]; c],
        }
    }

    /// `(1 - eps) * I + eps / C * J`.
    pub fn smoothed_identity(c: usize, eps: f64) -> Self {
        let off = eps / c as f64;
        let entries = (0..c)
            .map(|h| (0..c).map(|y| if h == y { 1.0 - eps + off } else { off }).collect())
            .collect();
        ConfusionMatrix { entries }
    }

    /// Build from per-column conditional distributions `columns[y][h]`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let c = columns.len();
        let entries = (0..c).map(|h| columns.iter().map(|col| col[h]).collect()).collect();
        Self::new(entries)
    }

    pub fn categories(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, human: usize, truth: usize) -> f64 {
        self.entries[human][truth]
    }

    /// Likelihood row `p(H = human | y)` over all y.
    pub fn row(&self, human: usize) -> &[f64] {
        &self.entries[human]
    }

    pub fn column(&self, truth: usize) -> Vec<f64> {
        self.entries.iter().map(|row| row[truth]).collect()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn frobenius_distance(&self, other: &ConfusionMatrix) -> f64 {
        self.entries
            .iter()
            .flatten()
            .zip(other.entries.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_difference(&self, other: &ConfusionMatrix) -> f64 {
        self.entries
            .iter()
            .flatten()
            .zip(other.entries.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<Vec<f64>>> for ConfusionMatrix {
    type Error = Error;

    fn try_from(entries: Vec<Vec<f64>>) -> Result<Self> {
        ConfusionMatrix::new(entries)
    }
}

impl From<ConfusionMatrix> for Vec<Vec<f64>> {
    fn from(m: ConfusionMatrix) -> Self {
        m.entries
    }
}

impl Validate for ConfusionMatrix {
    fn validate_into(&self, path: &str, ctx: &ValidationContext, out: &mut Vec<Violation>) {
        for v in Self::check(&self.entries).violations {
            let p = if path.is_empty() { v.path } else { format!("{path}.{}", v.path) };
            out.push(Violation { path: p, message: v.message });
        }
        if let Some(c) = ctx.categories {
            if self.categories() != c {
                push(out, path, "", format!("{}×{} matrix for C = {c}", self.categories(), self.categories()));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Decision log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    #[serde(flatten)]
    pub sentence_ref: SentenceRef,
    pub embedding: Vec<f64>,
    pub human_label: usize,
    pub machine_probs: Vec<f64>,
}

impl Validate for DecisionRecord {
    fn validate_into(&self, path: &str, ctx: &ValidationContext, out: &mut Vec<Violation>) {
        check_distribution(&self.machine_probs, path, "machine_probs", ctx, out);
        if let Some(c) = ctx.categories {
            if self.human_label >= c {
                push(out, path, "human_label", format!("label {} ≥ C = {c}", self.human_label));
            }
        }
        if let Some(d) = ctx.dimension {
            if self.embedding.len() != d {
                push(out, path, "embedding", format!("dimension {} ≠ {d}", self.embedding.len()));
            }
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            push(out, path, "embedding", "non-finite component");
        }
    }
}

/// Historical human and machine decisions: the unlabeled EM training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionLog {
    pub dimension: usize,
    pub category_set: CategorySet,
    pub records: Vec<DecisionRecord>,
}

impl DecisionLog {
    pub fn categories(&self) -> usize {
        self.category_set.len()
    }
}

impl Validate for DecisionLog {
    fn validate_into(&self, path: &str, _ctx: &ValidationContext, out: &mut Vec<Violation>) {
        if self.dimension == 0 {
            push(out, path, "dimension", "must be positive");
        }
        self.category_set.validate_into("category_set", &ValidationContext::default(), out);
        let ctx = ValidationContext {
            categories: Some(self.category_set.len()),
            dimension: Some(self.dimension),
        };
        for (i, r) in self.records.iter().enumerate() {
            r.validate_into(&format!("records[{i}]"), &ctx, out);
        }
    }
}

// ---------------------------------------------------------------------------
// Prototype model
// ---------------------------------------------------------------------------

/// Hyper-parameters echoed into a fitted [`PrototypeModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub prototypes: usize,
    pub em_iterations: usize,
    pub smoothing: f64,
    pub init_epsilon: f64,
    pub seed: u64,
}

/// P centroids, each paired with the confusion matrix estimated for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeModel {
    pub dimension: usize,
    pub centroids: Vec<Vec<f64>>,
    pub confusions: Vec<ConfusionMatrix>,
    pub config: ModelConfig,
}

impl PrototypeModel {
    pub fn prototypes(&self) -> usize {
        self.centroids.len()
    }

    pub fn categories(&self) -> usize {
        self.confusions.first().map_or(0, ConfusionMatrix::categories)
    }

    /// Copy of the model with every matrix replaced by the identity.
    pub fn with_identity_confusions(&self) -> Self {
        let c = self.categories();
        PrototypeModel {
            confusions: vec![ConfusionMatrix::identity(c); self.confusions.len()],
            ..self.clone()
        }
    }
}

impl Validate for PrototypeModel {
    fn validate_into(&self, path: &str, ctx: &ValidationContext, out: &mut Vec<Violation>) {
        if self.centroids.is_empty() {
            push(out, path, "centroids", "P must be ≥ 1");
        }
        if self.centroids.len() != self.confusions.len() {
            push(
                out,
                path,
                "confusions",
                format!("{} matrices for {} centroids", self.confusions.len(), self.centroids.len()),
            );
        }
        for (i, c) in self.centroids.iter().enumerate() {
            if c.len() != self.dimension {
                push(out, path, &format!("centroids[{i}]"), format!("dimension {} ≠ {}", c.len(), self.dimension));
            }
        }
        let c0 = self.categories();
        for (i, m) in self.confusions.iter().enumerate() {
            let ctx = ValidationContext {
                categories: ctx.categories.or(Some(c0)),
                ..*ctx
            };
            m.validate_into(&format!("confusions[{i}]"), &ctx, out);
        }
        if self.config.prototypes != self.centroids.len() {
            push(out, path, "config.prototypes", "differs from centroid count");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sref() -> SentenceRef {
        SentenceRef::new("d", 0)
    }

    #[test]
    fn valid_machine_decision_has_empty_report() {
        let m = MachineDecision { sentence_ref: sref(), probs: vec![0.5, 0.5] };
        let ctx = ValidationContext { categories: Some(2), dimension: None };
        assert!(m.validate_with(&ctx).is_empty());
    }

    #[test]
    fn unnormalized_machine_decision_is_reported() {
        let m = MachineDecision { sentence_ref: sref(), probs: vec![0.7, 0.7] };
        let report = m.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].message.contains("sum"));
        assert_eq!(report.violations[0].path, "probs");
    }

    #[test]
    fn column_stochastic_matrix_is_valid() {
        let m = ConfusionMatrix::new(vec![vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap();
        assert!(m.validate().is_empty());
        assert_eq!(m.row(0), &[0.9, 0.2]);
        assert_eq!(m.column(1), vec![0.2, 0.8]);
    }

    #[test]
    fn row_stochastic_matrix_is_rejected() {
        let err = ConfusionMatrix::new(vec![vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn near_stochastic_columns_are_renormalized() {
        let m = ConfusionMatrix::new(vec![vec![0.5 + 4e-10, 0.5], vec![0.5, 0.5]]).unwrap();
        let s: f64 = m.column(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fused_tie_breaks_to_lowest_index() {
        let f = FusedDecision::new(sref(), vec![0.5, 0.5], false);
        assert_eq!(f.argmax_label, 0);
        let f = FusedDecision::new(sref(), vec![0.2, 0.4, 0.4], false);
        assert_eq!(f.argmax_label, 1);
    }

    #[test]
    fn category_set_invariants() {
        assert!(CategorySet::generic(4).is_ok());
        assert!(CategorySet::new(vec!["Not Key".into()]).is_err());
        assert!(CategorySet::new(vec!["Key".into(), "Not Key".into()]).is_err());
        assert!(CategorySet::with_ranks(vec!["Not Key".into(), "A".into(), "B".into()], vec![0, 2, 1]).is_ok());
        let bad = CategorySet::with_ranks(vec!["Not Key".into(), "A".into()], vec![1, 0]);
        assert!(bad.is_err());
        let dup = CategorySet::new(vec!["Not Key".into(), "A".into(), "A".into()]);
        assert!(dup.is_err());
    }

    #[test]
    fn document_wire_format_implies_indices() {
        let json = r#"{"doc_id":"a","sentences":[{"text":"x","label":1},{"text":"y","label":null}]}"#;
        let doc: Document = serde_json::from_str(json).unwrap();
        assert_eq!(doc.sentences[1].index, 1);
        assert_eq!(doc.sentences[1].doc_id, "a");
        assert_eq!(doc.sentences[0].true_label, Some(1));
        assert_eq!(serde_json::to_string(&doc).unwrap(), json);
    }

    #[test]
    fn document_label_out_of_range_is_reported() {
        let doc = Document::from_texts("a", [("x", Some(3))]);
        let ctx = ValidationContext { categories: Some(2), dimension: None };
        let report = doc.validate_with(&ctx);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].path, "sentences[0].label");
    }

    #[test]
    fn pair_with_shared_doc_id_is_invalid() {
        let d = Document::from_texts("a", [("x", None)]);
        let pair = CasePair { source: d.clone(), target: d, true_relation: None };
        assert!(!pair.validate().is_empty());
    }

    #[test]
    fn decision_wire_formats_flatten_refs() {
        let h = HumanDecision { sentence_ref: SentenceRef::new("d", 2), label: 1 };
        assert_eq!(serde_json::to_string(&h).unwrap(), r#"{"doc_id":"d","index":2,"label":1}"#);
        let m: MachineDecision = serde_json::from_str(r#"{"doc_id":"d","index":0,"probs":[0.25,0.75]}"#).unwrap();
        assert_eq!(m.argmax(), 1);
    }

    #[test]
    fn confusion_matrix_deserialization_enforces_columns() {
        assert!(serde_json::from_str::<ConfusionMatrix>("[[0.9,0.2],[0.1,0.8]]").is_ok());
        assert!(serde_json::from_str::<ConfusionMatrix>("[[0.9,0.2],[0.2,0.8]]").is_err());
    }

    #[test]
    fn prototype_model_counts_must_agree() {
        let model = PrototypeModel {
            dimension: 2,
            centroids: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            confusions: vec![ConfusionMatrix::identity(2)],
            config: ModelConfig { prototypes: 2, em_iterations: 40, smoothing: 1.0, init_epsilon: 0.2, seed: 0 },
        };
        let report = model.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].path.contains("confusions"));
    }

    #[test]
    fn decision_log_checks_record_dimensions() {
        let log = DecisionLog {
            dimension: 3,
            category_set: CategorySet::generic(2).unwrap(),
            records: vec![DecisionRecord {
                sentence_ref: sref(),
                embedding: vec![0.0, 1.0],
                human_label: 2,
                machine_probs: vec![0.5, 0.4],
            }],
        };
        let paths: Vec<String> = log.validate().violations.into_iter().map(|v| v.path).collect();
        assert!(paths.contains(&"records[0].embedding".to_string()));
        assert!(paths.contains(&"records[0].human_label".to_string()));
        assert!(paths.contains(&"records[0].machine_probs".to_string()));
    }
}
