//! Seeded synthetic corpora with known per-prototype human confusion.
//!
//! Gaussian mode places each sentence in one of P bumps `R·e_j` (the first P
//! coordinates, spread `σ_b`), plus isotropic "content" noise in the remaining
//! coordinates. A target document copies the prototypes and labels of its
//! source and mixes the source content with fresh noise at a per-pair
//! correlation ρ, which sets how related the pair is. Relations are the
//! reference matcher's verdict on ground-truth one-hot decisions.
//!
//! Text mode instead gives every document a prototype vocabulary and embeds
//! its sentences with the hashing embedder.
//!
//! The decision log is drawn from separate historical sentences: labels from
//! the prototype's class prior, machine distributions from the calibrated
//! machine simulator, human labels i.i.d. from the prototype's true confusion
//! matrix given the label.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{embed_corpus, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::matcher::{match_pair, RelationConfig};
use crate::model::{
    CasePair, CategorySet, ConfusionMatrix, DecisionLog, DecisionRecord, Document, FusedDecision, SentenceRef,
};
use crate::rng;
use crate::simulation::{noise_confusion, simulate_machine, MachineSimConfig, NoiseModel};
use crate::EmbeddingMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    #[default]
    Gaussian,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub category_names: Vec<String>,
    pub prototypes: usize,
    pub pairs: usize,
    pub sentences_per_doc: usize,
    pub records_per_prototype: usize,
    pub mode: GeneratorMode,
    pub dimension: usize,
    pub bump_radius: f64,
    pub bump_sigma: f64,
    pub content_sigma: f64,
    /// Per-pair correlation between source and target content, uniform on this range.
    pub correlation_range: (f64, f64),
    /// Class prior per prototype; generated when empty.
    pub class_priors: Vec<Vec<f64>>,
    /// True confusion matrix per prototype; derived from the noise model when empty.
    pub confusions: Vec<ConfusionMatrix>,
    pub noise_model: NoiseModel,
    pub noise_rate: f64,
    /// Multiplier on `noise_rate` per prototype; see [`default_noise_multipliers`] when empty.
    pub group_noise_multipliers: Vec<f64>,
    pub machine: MachineSimConfig,
    pub relation: RelationConfig,
    /// Embedder settings for text mode.
    pub embedding: EmbeddingConfig,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            category_names: vec![
                "Not Key".into(),
                "Key Circumstance".into(),
                "Constitutive Element".into(),
                "Focus of Dispute".into(),
            ],
            prototypes: 4,
            pairs: 720,
            sentences_per_doc: 12,
            records_per_prototype: 5000,
            mode: GeneratorMode::Gaussian,
            dimension: 64,
            bump_radius: 3.0,
            bump_sigma: 0.75,
            content_sigma: 1.0,
            correlation_range: (-0.95, 0.95),
            class_priors: Vec::new(),
            confusions: Vec::new(),
            noise_model: NoiseModel::DropToNotkey,
            noise_rate: 0.1,
            group_noise_multipliers: Vec::new(),
            machine: MachineSimConfig::default(),
            relation: RelationConfig::default(),
            embedding: EmbeddingConfig { dimension: 256, ..Default::default() },
        }
    }
}

impl GeneratorSpec {
    /// Four sentence categories.
    pub fn elam_like() -> Self {
        Self::default()
    }

    /// Two sentence categories.
    pub fn ecail_like() -> Self {
        // Binary priors put majority-class accuracy near 0.7, so the machine aims higher.
        GeneratorSpec {
            category_names: vec!["Not Key".into(), "Key".into()],
            machine: MachineSimConfig { target_accuracy: 0.85, ..MachineSimConfig::default() },
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "elam-like" => Ok(Self::elam_like()),
            "ecail-like" => Ok(Self::ecail_like()),
            _ => Err(Error::Config(format!("unknown preset \"{name}\"; available: elam-like, ecail-like"))),
        }
    }

    pub fn categories(&self) -> Result<CategorySet> {
        CategorySet::new(self.category_names.clone())
    }

    /// Resolved per-prototype class priors.
    pub fn resolved_priors(&self) -> Vec<Vec<f64>> {
        if !self.class_priors.is_empty() {
            return self.class_priors.clone();
        }
        let c = self.category_names.len();
        (0..self.prototypes)
            .map(|j| {
                if c == 2 {
                    let key = [0.3, 0.45, 0.35, 0.5][j % 4];
                    return vec![1.0 - key, key];
                }
                let boosted = 1 + j % (c - 1);
                let mut p = vec![0.0; c];
                p[0] = 0.5;
                let share = 0.5 / c as f64;
                for (k, v) in p.iter_mut().enumerate().skip(1) {
                    *v = if k == boosted { 2.0 * share } else { share };
                }
                p
            })
            .collect()
    }

    pub fn resolved_multipliers(&self) -> Vec<f64> {
        if !self.group_noise_multipliers.is_empty() {
            return self.group_noise_multipliers.clone();
        }
        default_noise_multipliers(self.prototypes)
    }

    pub fn resolved_confusions(&self) -> Result<Vec<ConfusionMatrix>> {
        if !self.confusions.is_empty() {
            return Ok(self.confusions.clone());
        }
        let c = self.category_names.len();
        self.resolved_multipliers()
            .iter()
            .map(|m| noise_confusion(self.noise_model, (self.noise_rate * m).clamp(0.0, 1.0), c))
            .collect()
    }

    /// Validate the generator settings; returns warnings for settings that void recovery guarantees.
    pub fn check(&self) -> Result<Vec<String>> {
        let cats = self.categories()?;
        let c = cats.len();
        if c != 2 && c != 4 {
            return Err(Error::Config(format!("generator supports C ∈ {{2, 4}}, got {c}")));
        }
        if self.prototypes == 0 || self.pairs == 0 || self.sentences_per_doc == 0 {
            return Err(Error::Config("prototypes, pairs and sentences per doc must be positive".into()));
        }
        if self.mode == GeneratorMode::Gaussian && self.dimension < self.prototypes + 1 {
            return Err(Error::Config(format!(
                "dimension {} leaves no content coordinates for {} prototypes",
                self.dimension, self.prototypes
            )));
        }
        if !(self.bump_sigma > 0.0 && self.content_sigma >= 0.0 && self.bump_radius > 0.0) {
            return Err(Error::Config("bump radius and spreads must be positive".into()));
        }
        let (lo, hi) = self.correlation_range;
        if !(-1.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("correlation range ({lo}, {hi}) must lie in [-1, 1]")));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!("noise rate {} not in [0, 1]", self.noise_rate)));
        }
        let priors = self.resolved_priors();
        if priors.len() != self.prototypes || priors.iter().any(|p| p.len() != c) {
            return Err(Error::Config("need one class prior of length C per prototype".into()));
        }
        for p in &priors {
            let s: f64 = p.iter().sum();
            if p.iter().any(|x| *x < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config("class priors must be distributions".into()));
            }
        }
        if self.resolved_multipliers().len() != self.prototypes {
            return Err(Error::Config("need one noise multiplier per prototype".into()));
        }
        let confusions = self.resolved_confusions()?;
        if confusions.len() != self.prototypes || confusions.iter().any(|m| m.categories() != c) {
            return Err(Error::Config("need one C×C confusion matrix per prototype".into()));
        }
        self.relation.check()?;

        let mut warnings = Vec::new();
        let gap = self.bump_radius * std::f64::consts::SQRT_2;
        if self.mode == GeneratorMode::Gaussian && self.prototypes > 1 && gap < 3.0 * self.bump_sigma {
            warnings.push(format!(
                "bump means are {gap:.3} apart, closer than 3σ = {:.3}; prototype recovery is not guaranteed",
                3.0 * self.bump_sigma
            ));
        }
        Ok(warnings)
    }
}

/// Per-prototype noise multipliers with mean one: the first half of the
/// prototypes are noise-free contexts, the rest ramp up linearly.
/// For P = 4 this is `[0, 0, 1, 3]`.
pub fn default_noise_multipliers(prototypes: usize) -> Vec<f64> {
    let p = prototypes;
    if p <= 1 {
        return vec![1.0; p];
    }
    let clean = p / 2;
    let u = p - clean;
    let ramp: Vec<f64> = if u == 1 { vec![1.0] } else { (0..u).map(|i| 1.0 + 2.0 * i as f64 / (u - 1) as f64).collect() };
    let scale = p as f64 / ramp.iter().sum::<f64>();
    std::iter::repeat_n(0.0, clean).chain(ramp.into_iter().map(|r| r * scale)).collect()
}

/// Everything needed to score against the generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub seed: u64,
    pub category_set: CategorySet,
    pub prototypes: usize,
    pub confusions: Vec<ConfusionMatrix>,
    pub class_priors: Vec<Vec<f64>>,
    pub noise_model: NoiseModel,
    pub noise_rate: f64,
    pub group_noise_multipliers: Vec<f64>,
    /// Generating prototype of every corpus sentence, by document.
    pub sentence_groups: BTreeMap<String, Vec<usize>>,
    pub relation_counts: Vec<usize>,
    /// True label of every decision-log record, in record order.
    pub log_labels: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SyntheticTruth {
    pub fn group_map(&self) -> BTreeMap<SentenceRef, usize> {
        self.sentence_groups
            .iter()
            .flat_map(|(d, gs)| gs.iter().enumerate().map(move |(i, g)| (SentenceRef::new(d.clone(), i), *g)))
            .collect()
    }

    /// True confusion matrix of every corpus sentence.
    pub fn truth_lookup(&self) -> BTreeMap<SentenceRef, ConfusionMatrix> {
        self.group_map()
            .into_iter()
            .map(|(r, g)| (r, self.confusions[g].clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub pairs: Vec<CasePair>,
    pub embeddings: EmbeddingMap,
    pub log: DecisionLog,
    pub truth: SyntheticTruth,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn categorical(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let mut t: f64 = rng.random();
    for (k, pk) in p.iter().enumerate() {
        if t < *pk {
            return k;
        }
        t -= pk;
    }
    p.iter().rposition(|x| *x > 0.0).unwrap_or(0)
}

struct GaussianSpace<'a> {
    spec: &'a GeneratorSpec,
}

impl GaussianSpace<'_> {
    fn bump(&self, rng: &mut ChaCha8Rng, j: usize) -> Vec<f64> {
        let s = self.spec;
        (0..s.prototypes)
            .map(|k| if k == j { s.bump_radius } else { 0.0 } + s.bump_sigma * normal(rng))
            .collect()
    }

    fn content(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.spec;
        (s.prototypes..s.dimension).map(|_| s.content_sigma * normal(rng)).collect()
    }

    fn join(bump: Vec<f64>, content: &[f64]) -> Vec<f64> {
        let mut v = bump;
        v.extend_from_slice(content);
        v
    }
}

/// A sentence before it is placed in a document.
struct Draft {
    group: usize,
    label: usize,
    text: String,
}

fn text_sentence(rng: &mut ChaCha8Rng, group: usize, label: usize, words: usize) -> String {
    let mut w: Vec<String> = (0..words).map(|_| format!("p{group}w{}", rng.random_range(0..60))).collect();
    if label > 0 {
        w.push(format!("cue{label}x{}", rng.random_range(0..4)));
    }
    w.join(" ")
}

/// Target text keeping each source word with probability `(1 + ρ) / 2`.
fn perturb_text(rng: &mut ChaCha8Rng, source: &str, group: usize, rho: f64) -> String {
    let keep = (1.0 + rho) / 2.0;
    source
        .split(' ')
        .map(|w| {
            if w.starts_with("cue") || rng.random::<f64>() < keep {
                w.to_string()
            } else {
                format!("p{group}w{}", rng.random_range(0..60))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn one_hot_doc(doc: &Document, c: usize) -> Vec<FusedDecision> {
    doc.sentences
        .iter()
        .map(|s| FusedDecision::one_hot(s.sentence_ref(), s.true_label.unwrap_or(0), c))
        .collect()
}

/// Generate a corpus, its embeddings, a decision log and the ground truth.
pub fn gen_synthetic(spec: &GeneratorSpec, seed: u64) -> Result<SyntheticData> {
    let mut warnings = spec.check()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let cats = spec.categories()?;
    let c = cats.len();
    let priors = spec.resolved_priors();
    let confusions = spec.resolved_confusions()?;
    let multipliers = spec.resolved_multipliers();
    let space = GaussianSpace { spec };
    let n = spec.sentences_per_doc;

    // Corpus.
    let mut rng = rng::stream(seed, "corpus");
    let mut pairs = Vec::with_capacity(spec.pairs);
    let mut embeddings = EmbeddingMap::new();
    let mut sentence_groups = BTreeMap::new();
    for p in 0..spec.pairs {
        let (lo, hi) = spec.correlation_range;
        let rho = lo + (hi - lo) * rng.random::<f64>();
        let doc_group = rng.random_range(0..spec.prototypes);
        let drafts: Vec<Draft> = (0..n)
            .map(|_| {
                let group = match spec.mode {
                    GeneratorMode::Gaussian => rng.random_range(0..spec.prototypes),
                    GeneratorMode::Text => doc_group,
                };
                let label = categorical(&mut rng, &priors[group]);
                let text = match spec.mode {
                    GeneratorMode::Gaussian => String::new(),
                    GeneratorMode::Text => text_sentence(&mut rng, group, label, 6),
                };
                Draft { group, label, text }
            })
            .collect();
        let sid = format!("case{p:05}a");
        let tid = format!("case{p:05}b");
        let mut src_texts = Vec::with_capacity(n);
        let mut tgt_texts = Vec::with_capacity(n);
        for (i, d) in drafts.iter().enumerate() {
            match spec.mode {
                GeneratorMode::Gaussian => {
                    let zs = space.content(&mut rng);
                    let fresh = space.content(&mut rng);
                    let zt: Vec<f64> = zs
                        .iter()
                        .zip(&fresh)
                        .map(|(a, b)| rho * a + (1.0 - rho * rho).sqrt() * b)
                        .collect();
                    let bs = space.bump(&mut rng, d.group);
                    let bt = space.bump(&mut rng, d.group);
                    embeddings.insert(SentenceRef::new(sid.clone(), i), GaussianSpace::join(bs, &zs));
                    embeddings.insert(SentenceRef::new(tid.clone(), i), GaussianSpace::join(bt, &zt));
                    src_texts.push((format!("synthetic sentence {i} of {sid}"), Some(d.label)));
                    tgt_texts.push((format!("synthetic sentence {i} of {tid}"), Some(d.label)));
                }
                GeneratorMode::Text => {
                    let t = perturb_text(&mut rng, &d.text, d.group, rho);
                    src_texts.push((d.text.clone(), Some(d.label)));
                    tgt_texts.push((t, Some(d.label)));
                }
            }
        }
        let groups: Vec<usize> = drafts.iter().map(|d| d.group).collect();
        sentence_groups.insert(sid.clone(), groups.clone());
        sentence_groups.insert(tid.clone(), groups);
        pairs.push(CasePair {
            source: Document::from_texts(sid, src_texts),
            target: Document::from_texts(tid, tgt_texts),
            true_relation: None,
        });
    }
    if spec.mode == GeneratorMode::Text {
        let docs: Vec<&Document> = pairs.iter().flat_map(|p| p.documents()).collect();
        embeddings = embed_corpus(&docs, &spec.embedding)?;
    }
    let mut relation_counts = vec![0; spec.relation.relations];
    for pair in pairs.iter_mut() {
        let out = match_pair(
            pair,
            &one_hot_doc(&pair.source, c),
            &one_hot_doc(&pair.target, c),
            &embeddings,
            &spec.relation,
        )?;
        pair.true_relation = Some(out.relation);
        relation_counts[out.relation] += 1;
    }
    if relation_counts.iter().filter(|n| **n > 0).count() < relation_counts.len() {
        let w = format!("not every relation occurs in the corpus: counts {relation_counts:?}");
        log::warn!("{w}");
        warnings.push(w);
    }

    // Decision log.
    let dimension = match spec.mode {
        GeneratorMode::Gaussian => spec.dimension,
        GeneratorMode::Text => spec.embedding.dimension,
    };
    let mut records = Vec::with_capacity(spec.prototypes * spec.records_per_prototype);
    let mut log_labels = Vec::with_capacity(records.capacity());
    for j in 0..spec.prototypes {
        let mut rng = rng::stream_n(seed, "log", j as u64);
        let doc_id = format!("hist{j:02}");
        let labels: Vec<usize> = (0..spec.records_per_prototype).map(|_| categorical(&mut rng, &priors[j])).collect();
        let vectors: Vec<Vec<f64>> = match spec.mode {
            GeneratorMode::Gaussian => labels
                .iter()
                .map(|_| {
                    let b = space.bump(&mut rng, j);
                    let z = space.content(&mut rng);
                    GaussianSpace::join(b, &z)
                })
                .collect(),
            GeneratorMode::Text => {
                let mut docs = Vec::new();
                for (k, chunk) in labels.chunks(n).enumerate() {
                    let texts: Vec<(String, Option<usize>)> =
                        chunk.iter().map(|&y| (text_sentence(&mut rng, j, y, 6), Some(y))).collect();
                    docs.push(Document::from_texts(format!("{doc_id}-{k:05}"), texts));
                }
                let refs: Vec<&Document> = docs.iter().collect();
                let m = embed_corpus(&refs, &spec.embedding)?;
                docs.iter().flat_map(|d| d.refs()).map(|r| m[&r].clone()).collect()
            }
        };
        let mcfg = MachineSimConfig { seed: rng::derive_seed_n(seed, "log-machine", j as u64), ..spec.machine.clone() };
        let machine = simulate_machine(&labels, c, &mcfg)?;
        let phi = &confusions[j];
        let columns: Vec<Vec<f64>> = (0..c).map(|y| phi.column(y)).collect();
        let mut hrng = rng::stream_n(seed, "log-human", j as u64);
        for (k, ((y, v), m)) in labels.iter().zip(vectors).zip(machine.probs).enumerate() {
            records.push(DecisionRecord {
                sentence_ref: SentenceRef::new(doc_id.clone(), k),
                embedding: v,
                human_label: categorical(&mut hrng, &columns[*y]),
                machine_probs: m,
            });
        }
        log_labels.extend(labels);
    }

    Ok(SyntheticData {
        pairs,
        embeddings,
        log: DecisionLog { dimension, category_set: cats.clone(), records },
        truth: SyntheticTruth {
            seed,
            category_set: cats,
            prototypes: spec.prototypes,
            confusions,
            class_priors: priors,
            noise_model: spec.noise_model,
            noise_rate: spec.noise_rate,
            group_noise_multipliers: multipliers,
            sentence_groups,
            relation_counts,
            log_labels,
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorSpec {
        GeneratorSpec { pairs: 20, records_per_prototype: 200, ..Default::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic(&small(), 3).unwrap();
        let b = gen_synthetic(&small(), 3).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&small(), 4).unwrap();
        assert_ne!(a.pairs, c.pairs);
    }

    #[test]
    fn shapes_follow_presets() {
        let d = gen_synthetic(&GeneratorSpec { pairs: 5, records_per_prototype: 200, ..GeneratorSpec::ecail_like() }, 0).unwrap();
        assert_eq!(d.truth.category_set.len(), 2);
        assert_eq!(d.log.records.len(), 800);
        assert_eq!(d.embeddings.len(), 5 * 2 * 12);
        assert!(d.pairs.iter().all(CasePair::is_labeled));
        assert_eq!(GeneratorSpec::elam_like().categories().unwrap().len(), 4);
    }

    #[test]
    fn default_multipliers_average_one() {
        assert_eq!(default_noise_multipliers(4), vec![0.0, 0.0, 1.0, 3.0]);
        assert_eq!(default_noise_multipliers(1), vec![1.0]);
        assert_eq!(default_noise_multipliers(2), vec![0.0, 2.0]);
        for p in 1..12 {
            let m = default_noise_multipliers(p);
            assert_eq!(m.len(), p);
            assert!((m.iter().sum::<f64>() / p as f64 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn close_bumps_warn() {
        let spec = GeneratorSpec { bump_radius: 0.5, ..small() };
        assert!(!spec.check().unwrap().is_empty());
        assert!(small().check().unwrap().is_empty());
    }

    #[test]
    fn unsupported_category_count() {
        let spec = GeneratorSpec { category_names: vec!["Not Key".into(), "A".into(), "B".into()], ..small() };
        assert!(matches!(spec.check(), Err(Error::Config(_))));
    }

    #[test]
    fn text_mode_runs() {
        let spec = GeneratorSpec { mode: GeneratorMode::Text, pairs: 6, records_per_prototype: 30, ..Default::default() };
        let d = gen_synthetic(&spec, 1).unwrap();
        assert_eq!(d.log.dimension, 256);
        assert_eq!(d.embeddings.values().next().unwrap().len(), 256);
        assert!(!d.pairs[0].source.sentences[0].text.is_empty());
    }
}
