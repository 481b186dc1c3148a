//! Relation prediction for case pairs from fused key-sentence decisions.
//!
//! The reference scorer builds, for every key category `c ≥ 1`, the
//! posterior-weighted sum of sentence embeddings in each document and compares
//! the two sums by cosine similarity. The pair score is the mean over
//! categories with mass on both sides, mapped from `[-1, 1]` to `[0, 1]`; the
//! relation index is the number of thresholds strictly below the score.
//!
//! Other scorers plug in through [`Matcher`] and [`MatcherRegistry`].

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CasePair, Document, FusedDecision};
use crate::EmbeddingMap;

pub const REFERENCE_MATCHER: &str = "reference";

/// Mass below this counts as absent.
const MASS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationConfig {
    pub relations: usize,
    pub thresholds: Vec<f64>,
}

impl Default for RelationConfig {
    fn default() -> Self {
        RelationConfig {
            relations: 3,
            thresholds: vec![0.45, 0.7],
        }
    }
}

impl RelationConfig {
    pub fn check(&self) -> Result<()> {
        if self.relations == 0 || self.thresholds.len() + 1 != self.relations {
            return Err(Error::Config(format!(
                "{} thresholds for {} relations",
                self.thresholds.len(),
                self.relations
            )));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("thresholds must be strictly increasing".into()));
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn relation_for(&self, score: f64) -> usize {
        self.thresholds.iter().filter(|t| **t < score).count()
    }
}

/// Which form of the fused decisions a matcher sees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    /// One-hot at the fused argmax: the selected key sentences.
    #[default]
    Argmax,
    /// The full fused posterior as weights.
    Posterior,
}

impl std::str::FromStr for DecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(DecisionMode::Argmax),
            "posterior" => Ok(DecisionMode::Posterior),
            _ => Err(Error::Config(format!("unknown decision mode \"{s}\"; expected argmax or posterior"))),
        }
    }
}

impl DecisionMode {
    /// Decisions in the form this mode feeds to a matcher.
    pub fn prepare(self, fused: &[FusedDecision]) -> Vec<FusedDecision> {
        match self {
            DecisionMode::Posterior => fused.to_vec(),
            DecisionMode::Argmax => fused
                .iter()
                .map(|f| FusedDecision {
                    fallback_used: f.fallback_used,
                    ..FusedDecision::one_hot(f.sentence_ref.clone(), f.argmax_label, f.posterior.len())
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub relation: usize,
    pub score: f64,
    /// Cosine similarity per category (index 0 unused), `None` when skipped.
    pub category_similarity: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostic: Option<String>,
}

/// Everything a matcher sees for one pair.
pub struct MatchInput<'a> {
    pub pair: &'a CasePair,
    pub fused_source: &'a [FusedDecision],
    pub fused_target: &'a [FusedDecision],
    pub embeddings: &'a EmbeddingMap,
    pub config: &'a RelationConfig,
}

pub trait Matcher: Send + Sync {
    fn match_pair(&self, input: &MatchInput<'_>) -> Result<MatchOutcome>;
}

/// Posterior-weighted embedding sums per category.
fn category_sums(
    doc: &Document,
    fused: &[FusedDecision],
    embeddings: &EmbeddingMap,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if fused.len() != doc.sentences.len() {
        return Err(Error::Completeness(format!(
            "{} fused decisions for {} sentences of {}",
            fused.len(),
            doc.sentences.len(),
            doc.doc_id
        )));
    }
    let c = fused.first().map_or(0, |f| f.posterior.len());
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut mass = vec![0.0; c];
    for (s, f) in doc.sentences.iter().zip(fused) {
        let r = s.sentence_ref();
        if f.sentence_ref != r {
            return Err(Error::Completeness(format!("fused decision order mismatch at {r}")));
        }
        let e = embeddings
            .get(&r)
            .ok_or_else(|| Error::Completeness(format!("no embedding for {r}")))?;
        if sums.is_empty() {
            sums = vec![vec![0.0; e.len()]; c];
        }
        for k in 1..c {
            let w = f.posterior[k];
            if w > 0.0 {
                mass[k] += w;
                for (acc, x) in sums[k].iter_mut().zip(e) {
                    *acc += w * x;
                }
            }
        }
    }
    Ok((sums, mass))
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// The built-in geometric scorer.
pub fn match_pair(
    pair: &CasePair,
    fused_source: &[FusedDecision],
    fused_target: &[FusedDecision],
    embeddings: &EmbeddingMap,
    config: &RelationConfig,
) -> Result<MatchOutcome> {
    config.check()?;
    let (src, src_mass) = category_sums(&pair.source, fused_source, embeddings)?;
    let (tgt, tgt_mass) = category_sums(&pair.target, fused_target, embeddings)?;
    let c = src_mass.len().max(tgt_mass.len());
    let mut category_similarity = vec![None; c];
    for k in 1..c.min(src_mass.len()).min(tgt_mass.len()) {
        if src_mass[k] > MASS_EPS && tgt_mass[k] > MASS_EPS {
            category_similarity[k] = cosine(&src[k], &tgt[k]);
        }
    }
    let sims: Vec<f64> = category_similarity.iter().flatten().copied().collect();
    if sims.is_empty() {
        return Ok(MatchOutcome {
            relation: 0,
            score: 0.0,
            category_similarity,
            diagnostic: Some("no key category has mass in both documents".into()),
        });
    }
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    let score = ((mean + 1.0) / 2.0).clamp(0.0, 1.0);
    Ok(MatchOutcome {
        relation: config.relation_for(score),
        score,
        category_similarity,
        diagnostic: None,
    })
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ReferenceMatcher;

impl Matcher for ReferenceMatcher {
    fn match_pair(&self, input: &MatchInput<'_>) -> Result<MatchOutcome> {
        match_pair(input.pair, input.fused_source, input.fused_target, input.embeddings, input.config)
    }
}

/// Named matchers selectable from configs, the CLI and the service.
#[derive(Clone)]
pub struct MatcherRegistry {
    matchers: BTreeMap<String, Arc<dyn Matcher>>,
}

impl Default for MatcherRegistry {
    fn default() -> Self {
        let mut r = MatcherRegistry { matchers: BTreeMap::new() };
        r.matchers.insert(REFERENCE_MATCHER.to_string(), Arc::new(ReferenceMatcher));
        r
    }
}

impl MatcherRegistry {
    /// Registry with only the reference matcher.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, matcher: Arc<dyn Matcher>) -> Result<()> {
        if self.matchers.contains_key(name) {
            return Err(Error::Config(format!("matcher \"{name}\" is already registered")));
        }
        self.matchers.insert(name.to_string(), matcher);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Matcher>> {
        self.matchers.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown matcher \"{name}\"; available: {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.matchers.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SentenceRef;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pair(src_n: usize, tgt_n: usize) -> CasePair {
        CasePair {
            source: Document::from_texts("s", (0..src_n).map(|_| ("x", None))),
            target: Document::from_texts("t", (0..tgt_n).map(|_| ("x", None))),
            true_relation: None,
        }
    }

    fn fused(doc: &str, posts: &[Vec<f64>]) -> Vec<FusedDecision> {
        posts
            .iter()
            .enumerate()
            .map(|(i, p)| FusedDecision::new(SentenceRef::new(doc, i), p.clone(), false))
            .collect()
    }

    fn emb(doc: &str, vs: &[Vec<f64>]) -> EmbeddingMap {
        vs.iter().enumerate().map(|(i, v)| (SentenceRef::new(doc, i), v.clone())).collect()
    }

    #[test]
    fn self_match_scores_one() {
        let p = pair(3, 3);
        let vs = vec![vec![1.0, 0.2, 0.0], vec![0.0, 1.0, 0.5], vec![0.3, 0.3, 0.3]];
        let posts = vec![vec![0.2, 0.8, 0.0], vec![0.1, 0.1, 0.8], vec![1.0, 0.0, 0.0]];
        let mut e = emb("s", &vs);
        e.extend(emb("t", &vs));
        let out = match_pair(&p, &fused("s", &posts), &fused("t", &posts), &e, &RelationConfig::default()).unwrap();
        assert_abs_diff_eq!(out.score, 1.0, epsilon = 1e-12);
        assert_eq!(out.relation, 2);
    }

    #[test]
    fn orthogonal_key_sentences_score_half() {
        let p = pair(1, 1);
        let mut e = emb("s", &[vec![1.0, 0.0]]);
        e.extend(emb("t", &[vec![0.0, 1.0]]));
        let key = vec![vec![0.0, 1.0]];
        let out = match_pair(&p, &fused("s", &key), &fused("t", &key), &e, &RelationConfig::default()).unwrap();
        assert_abs_diff_eq!(out.score, 0.5, epsilon = 1e-12);
        assert_eq!(out.relation, 1);
    }

    #[test]
    fn no_key_mass_is_diagnosed() {
        let p = pair(1, 1);
        let mut e = emb("s", &[vec![1.0, 0.0]]);
        e.extend(emb("t", &[vec![1.0, 0.0]]));
        let out = match_pair(&p, &fused("s", &[vec![1.0, 0.0]]), &fused("t", &[vec![0.0, 1.0]]), &e, &RelationConfig::default()).unwrap();
        assert_eq!(out.score, 0.0);
        assert_eq!(out.relation, 0);
        assert!(out.diagnostic.is_some());
    }

    #[test]
    fn missing_decisions_are_an_error() {
        let p = pair(2, 1);
        let mut e = emb("s", &[vec![1.0], vec![1.0]]);
        e.extend(emb("t", &[vec![1.0]]));
        let err = match_pair(&p, &fused("s", &[vec![0.0, 1.0]]), &fused("t", &[vec![0.0, 1.0]]), &e, &RelationConfig::default());
        assert!(matches!(err, Err(Error::Completeness(_))));
    }

    #[test]
    fn argmax_mode_one_hots() {
        let f = fused("s", &[vec![0.3, 0.7], vec![0.6, 0.4]]);
        let hard = DecisionMode::Argmax.prepare(&f);
        assert_eq!(hard[0].posterior, vec![0.0, 1.0]);
        assert_eq!(hard[1].posterior, vec![1.0, 0.0]);
        assert_eq!(DecisionMode::Posterior.prepare(&f), f);
    }

    #[test]
    fn registry_semantics() {
        let mut reg = MatcherRegistry::new();
        assert!(reg.get(REFERENCE_MATCHER).is_ok());
        let err = reg.get("nope").err().unwrap().to_string();
        assert!(err.contains("reference"), "{err}");
        reg.register("other", Arc::new(ReferenceMatcher)).unwrap();
        assert_eq!(reg.names(), vec!["other".to_string(), "reference".to_string()]);
        assert!(matches!(reg.register("other", Arc::new(ReferenceMatcher)), Err(Error::Config(_))));
    }

    #[test]
    fn threshold_config_checks() {
        assert!(RelationConfig { relations: 3, thresholds: vec![0.7, 0.45] }.check().is_err());
        assert!(RelationConfig { relations: 2, thresholds: vec![0.45, 0.7] }.check().is_err());
        let cfg = RelationConfig::default();
        assert_eq!(cfg.relation_for(0.45), 0);
        assert_eq!(cfg.relation_for(0.46), 1);
        assert_eq!(cfg.relation_for(0.71), 2);
    }

    #[test]
    fn shared_sentence_mass_with_disjoint_remainder_never_lowers_score() {
        // Shared sentence along e3; the remaining key mass of each document is
        // orthogonal to it and to the other document.
        let p = pair(2, 2);
        let mut e = emb("s", &[vec![0.0, 0.0, 1.0], vec![2.0, 0.0, 0.0]]);
        e.extend(emb("t", &[vec![0.0, 0.0, 1.0], vec![0.0, 3.0, 0.0]]));
        let mut last = -1.0;
        for step in 0..=20 {
            let w = step as f64 / 20.0;
            let posts = vec![vec![1.0 - w, w], vec![0.0, 1.0]];
            let out = match_pair(&p, &fused("s", &posts), &fused("t", &posts), &e, &RelationConfig::default()).unwrap();
            assert!(out.score >= last - 1e-12);
            last = out.score;
        }
    }

    proptest! {
        #[test]
        fn score_bounds_and_symmetry(
            vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 6),
            ws in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 6),
        ) {
            let posts: Vec<Vec<f64>> = ws.iter().map(|w| {
                let s: f64 = w.iter().sum::<f64>() + 1e-9;
                w.iter().map(|x| x / s).collect()
            }).collect();
            let p = pair(3, 3);
            let swapped = CasePair { source: p.target.clone(), target: p.source.clone(), true_relation: None };
            let mut e = emb("s", &vs[..3]);
            e.extend(emb("t", &vs[3..]));
            let cfg = RelationConfig::default();
            let fs = fused("s", &posts[..3]);
            let ft = fused("t", &posts[3..]);
            let a = match_pair(&p, &fs, &ft, &e, &cfg).unwrap();
            let b = match_pair(&swapped, &ft, &fs, &e, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&a.score));
            prop_assert!(a.relation < cfg.relations);
            prop_assert!((a.score - b.score).abs() < 1e-12);
            prop_assert_eq!(a.relation, b.relation);
        }

        #[test]
        fn relation_monotone_in_score(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let cfg = RelationConfig::default();
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(cfg.relation_for(lo) <= cfg.relation_for(hi));
        }
    }
}
