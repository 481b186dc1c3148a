//! Per-prototype confusion-matrix estimation from unlabeled decision logs.
//!
//! Historical sentences are clustered into P prototypes; within each
//! prototype the true labels are latent and EM alternates
//!
//! - E-step: the fused posterior `γ_i = p(y | M_i, H_i, φ)` for every record;
//! - M-step: expected counts `N[q][k] = Σ_i 1[H_i = q] γ_i[k]`, normalized per
//!   true-label column with additive smoothing `α`.
//!
//! With `α = 0` the M-step maximizes the expected log-likelihood
//! `Σ_i Σ_k γ_i[k] log φ[H_i][k]` for fixed posteriors.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::fuse_probs;
use crate::model::{ConfusionMatrix, DecisionLog, DecisionRecord, ModelConfig, PrototypeModel, Validate};
use crate::prototypes::{assign_nearest, kmeans_fit, KMeansParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtoEmConfig {
    pub prototypes: usize,
    pub em_iterations: usize,
    /// Additive smoothing α for the M-step.
    pub smoothing: f64,
    /// ε in the initialization `(1 - ε) I + ε / C J`.
    pub init_epsilon: f64,
    pub seed: u64,
    /// Optional early stop once the largest entry change drops below this.
    pub convergence_tol: Option<f64>,
}

impl Default for ProtoEmConfig {
    fn default() -> Self {
        ProtoEmConfig {
            prototypes: 4,
            em_iterations: 40,
            smoothing: 1.0,
            init_epsilon: 0.2,
            seed: 0,
            convergence_tol: None,
        }
    }
}

impl ProtoEmConfig {
    pub fn check(&self) -> Result<()> {
        if self.prototypes == 0 {
            return Err(Error::Config("prototypes must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.init_epsilon) {
            return Err(Error::Config(format!("init_epsilon {} not in [0, 1)", self.init_epsilon)));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config(format!("smoothing {} must be ≥ 0", self.smoothing)));
        }
        Ok(())
    }
}

/// One EM iteration of one prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub prototype: usize,
    pub iter: usize,
    /// Expected log-likelihood of the E-step posteriors under the updated matrix.
    pub ell: f64,
    pub max_delta: f64,
    /// Same posteriors under the matrix before the update.
    #[serde(skip)]
    pub ell_before: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtoEmOutput {
    pub model: PrototypeModel,
    pub trace: Vec<TraceEntry>,
    /// Records assigned to each prototype.
    pub prototype_sizes: Vec<usize>,
    pub warnings: Vec<String>,
}

/// E-step: fused posterior of every record under `phi`.
pub fn e_step(records: &[DecisionRecord], phi: &ConfusionMatrix) -> Vec<Vec<f64>> {
    records
        .iter()
        .map(|r| fuse_probs(&r.machine_probs, r.human_label, phi).0)
        .collect()
}

/// M-step: smoothed expected-count estimate of a column-stochastic matrix.
pub fn m_step(
    records: &[DecisionRecord],
    posteriors: &[Vec<f64>],
    smoothing: f64,
    categories: usize,
) -> Result<ConfusionMatrix> {
    if records.len() != posteriors.len() {
        return Err(Error::Range(format!(
            "{} records for {} posteriors",
            records.len(),
            posteriors.len()
        )));
    }
    let c = categories;
    let mut counts = vec![vec![0.0; c]; c];
    for (r, g) in records.iter().zip(posteriors) {
        for (k, gk) in g.iter().enumerate() {
            counts[r.human_label][k] += gk;
        }
    }
    let mut entries = vec![vec![0.0; c]; c];
    for k in 0..c {
        let total: f64 = (0..c).map(|q| counts[q][k]).sum::<f64>() + c as f64 * smoothing;
        if total <= 0.0 {
            return Err(Error::DegenerateColumn { column: k });
        }
        for q in 0..c {
            entries[q][k] = (counts[q][k] + smoothing) / total;
        }
    }
    ConfusionMatrix::new(entries)
}

/// `Σ_i Σ_k γ_i[k] log φ[H_i][k]`, skipping zero-posterior terms.
pub fn expected_log_likelihood(
    records: &[DecisionRecord],
    posteriors: &[Vec<f64>],
    phi: &ConfusionMatrix,
) -> Result<f64> {
    let mut total = 0.0;
    for (r, g) in records.iter().zip(posteriors) {
        let row = phi.row(r.human_label);
        for (k, gk) in g.iter().enumerate() {
            if *gk > 0.0 {
                if row[k] <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "log 0: φ[{}][{k}] = 0 with posterior mass {gk}",
                        r.human_label
                    )));
                }
                total += gk * row[k].ln();
            }
        }
    }
    Ok(total)
}

/// Run EM for the records of one prototype.
fn em_single(
    records: &[DecisionRecord],
    categories: usize,
    cfg: &ProtoEmConfig,
    prototype: usize,
) -> Result<(ConfusionMatrix, Vec<TraceEntry>)> {
    let mut phi = ConfusionMatrix::smoothed_identity(categories, cfg.init_epsilon);
    let mut trace = Vec::with_capacity(cfg.em_iterations);
    for iter in 1..=cfg.em_iterations {
        let posteriors = e_step(records, &phi);
        let next = m_step(records, &posteriors, cfg.smoothing, categories)?;
        let ell_before = expected_log_likelihood(records, &posteriors, &phi).unwrap_or(f64::NEG_INFINITY);
        let ell = expected_log_likelihood(records, &posteriors, &next).unwrap_or(f64::NEG_INFINITY);
        let max_delta = next.max_abs_difference(&phi);
        trace.push(TraceEntry {
            prototype,
            iter,
            ell,
            max_delta,
            ell_before,
        });
        phi = next;
        if cfg.convergence_tol.is_some_and(|tol| max_delta < tol) {
            break;
        }
    }
    Ok((phi, trace))
}

/// Cluster the log into prototypes and estimate one confusion matrix per prototype.
pub fn run_protoem(log: &DecisionLog, cfg: &ProtoEmConfig) -> Result<ProtoEmOutput> {
    cfg.check()?;
    log.validate().into_result()?;
    let c = log.categories();
    let p = cfg.prototypes;
    if log.records.len() < p * c {
        return Err(Error::InsufficientData(format!(
            "{} records; need at least P·C = {}",
            log.records.len(),
            p * c
        )));
    }

    let vectors: Vec<Vec<f64>> = log.records.iter().map(|r| r.embedding.clone()).collect();
    let fit = kmeans_fit(&vectors, p, cfg.seed, &KMeansParams::default())?;

    let mut groups: Vec<Vec<DecisionRecord>> = vec![Vec::new(); p];
    for r in &log.records {
        let a = assign_nearest(&r.embedding, &fit.centroids)?;
        groups[a.prototype].push(r.clone());
    }

    let mut warnings = Vec::new();
    for (j, g) in groups.iter().enumerate() {
        if g.len() < c {
            let msg = format!("prototype {j} has {} records (< C = {c}); smoothing dominates", g.len());
            ::log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let results = groups
        .par_iter()
        .enumerate()
        .map(|(j, g)| em_single(g, c, cfg, j))
        .collect::<Result<Vec<_>>>()?;

    let mut confusions = Vec::with_capacity(p);
    let mut trace = Vec::new();
    for (phi, t) in results {
        confusions.push(phi);
        trace.extend(t);
    }

    Ok(ProtoEmOutput {
        model: PrototypeModel {
            dimension: log.dimension,
            centroids: fit.centroids,
            confusions,
            config: ModelConfig {
                prototypes: p,
                em_iterations: cfg.em_iterations,
                smoothing: cfg.smoothing,
                init_epsilon: cfg.init_epsilon,
                seed: cfg.seed,
            },
        },
        trace,
        prototype_sizes: groups.iter().map(Vec::len).collect(),
        warnings,
    })
}

/// The single-prototype baseline: one matrix for the whole log.
pub fn run_naive_em(log: &DecisionLog, cfg: &ProtoEmConfig) -> Result<ProtoEmOutput> {
    run_protoem(log, &ProtoEmConfig { prototypes: 1, ..cfg.clone() })
}

/// Write the iteration trace as JSON Lines.
pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for t in trace {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CategorySet, SentenceRef};
    use approx::assert_abs_diff_eq;

    fn rec(h: usize, m: Vec<f64>) -> DecisionRecord {
        DecisionRecord {
            sentence_ref: SentenceRef::new("d", 0),
            embedding: vec![0.0, 1.0],
            human_label: h,
            machine_probs: m,
        }
    }

    #[test]
    fn e_step_examples() {
        let records = vec![rec(0, vec![0.6, 0.4]), rec(1, vec![0.3, 0.7])];
        let id = e_step(&records, &ConfusionMatrix::identity(2));
        assert_eq!(id, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let uni = e_step(&records, &ConfusionMatrix::uniform(2));
        assert_abs_diff_eq!(uni[1][1], 0.7, epsilon = 1e-15);
        let phi = ConfusionMatrix::new(vec![vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap();
        let g = e_step(&records[..1], &phi);
        assert_abs_diff_eq!(g[0][0], 0.87097, epsilon = 1e-5);
        assert_abs_diff_eq!(g[0][1], 0.12903, epsilon = 1e-5);
    }

    #[test]
    fn m_step_hand_example() {
        let records = vec![rec(0, vec![0.5, 0.5]), rec(0, vec![0.5, 0.5]), rec(1, vec![0.5, 0.5])];
        let post = vec![vec![0.8, 0.2], vec![0.6, 0.4], vec![0.1, 0.9]];
        let phi = m_step(&records, &post, 0.0, 2).unwrap();
        assert_abs_diff_eq!(phi.get(0, 0), 1.4 / 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(phi.get(0, 0), 0.9333, epsilon = 1e-4);
        assert_abs_diff_eq!(phi.get(0, 1), 0.4, epsilon = 1e-4);
        assert_abs_diff_eq!(phi.get(1, 0), 0.0667, epsilon = 1e-4);
        assert_abs_diff_eq!(phi.get(1, 1), 0.6, epsilon = 1e-4);
    }

    #[test]
    fn m_step_self_consistent_and_empty_columns() {
        let records = vec![rec(0, vec![0.5, 0.5, 0.0]), rec(1, vec![0.5, 0.5, 0.0])];
        let post = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert!(matches!(m_step(&records, &post, 0.0, 3), Err(Error::DegenerateColumn { column: 2 })));
        let phi = m_step(&records, &post, 1.0, 3).unwrap();
        assert_eq!(phi.column(2), vec![1.0 / 3.0; 3]);

        let records = vec![rec(0, vec![0.5, 0.5]), rec(1, vec![0.5, 0.5])];
        let post = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(m_step(&records, &post, 0.0, 2).unwrap(), ConfusionMatrix::identity(2));
    }

    #[test]
    fn expected_log_likelihood_closed_forms() {
        let records = vec![rec(0, vec![0.5, 0.5]), rec(1, vec![0.5, 0.5]), rec(1, vec![0.5, 0.5])];
        let one_hot = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let ell = expected_log_likelihood(&records, &one_hot, &ConfusionMatrix::identity(2)).unwrap();
        assert_eq!(ell, 0.0);
        let soft = vec![vec![0.3, 0.7]; 3];
        let ell = expected_log_likelihood(&records, &soft, &ConfusionMatrix::uniform(2)).unwrap();
        assert_abs_diff_eq!(ell, 3.0 * (0.5f64).ln(), epsilon = 1e-12);
        assert!(matches!(
            expected_log_likelihood(&records, &soft, &ConfusionMatrix::identity(2)),
            Err(Error::Numeric(_))
        ));
    }

    fn tiny_log() -> DecisionLog {
        let records = (0..40)
            .map(|i| DecisionRecord {
                sentence_ref: SentenceRef::new(format!("d{}", i / 10), i % 10),
                embedding: vec![(i % 4) as f64 * 3.0, (i % 3) as f64],
                human_label: i % 2,
                machine_probs: if i % 3 == 0 { vec![0.8, 0.2] } else { vec![0.3, 0.7] },
            })
            .collect();
        DecisionLog { dimension: 2, category_set: CategorySet::generic(2).unwrap(), records }
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let cfg = ProtoEmConfig { em_iterations: 0, prototypes: 2, ..Default::default() };
        let out = run_protoem(&tiny_log(), &cfg).unwrap();
        for m in &out.model.confusions {
            assert_eq!(*m, ConfusionMatrix::smoothed_identity(2, 0.2));
        }
        assert!(out.trace.is_empty());
    }

    #[test]
    fn single_prototype_equals_naive() {
        let cfg = ProtoEmConfig { prototypes: 1, ..Default::default() };
        let a = run_protoem(&tiny_log(), &cfg).unwrap();
        let b = run_naive_em(&tiny_log(), &ProtoEmConfig::default()).unwrap();
        assert_eq!(serde_json::to_string(&a.model).unwrap(), serde_json::to_string(&b.model).unwrap());
        assert_eq!(b.model.prototypes(), 1);
        let mean: Vec<f64> = (0..2)
            .map(|d| tiny_log().records.iter().map(|r| r.embedding[d]).sum::<f64>() / 40.0)
            .collect();
        assert_eq!(b.model.centroids[0], mean);
    }

    #[test]
    fn insufficient_records() {
        let mut log = tiny_log();
        log.records.truncate(7);
        let err = run_protoem(&log, &ProtoEmConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn small_prototypes_warn() {
        let mut log = tiny_log();
        log.records[0].embedding = vec![100.0, 100.0];
        let cfg = ProtoEmConfig { prototypes: 5, ..Default::default() };
        let out = run_protoem(&log, &cfg).unwrap();
        assert!(!out.warnings.is_empty());
        for m in &out.model.confusions {
            assert!(m.validate().is_empty());
        }
    }

    #[test]
    fn early_stop_on_tolerance() {
        let cfg = ProtoEmConfig { prototypes: 1, em_iterations: 500, convergence_tol: Some(1e-7), ..Default::default() };
        let out = run_protoem(&tiny_log(), &cfg).unwrap();
        assert!(out.trace.len() < 500);
        assert!(out.trace.last().unwrap().max_delta < 1e-7);
    }
}
