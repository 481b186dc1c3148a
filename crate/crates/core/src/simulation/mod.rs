//! Simulated decision makers, ablation combiners and evaluation metrics.
//!
//! The experiment harness built on top of these lives in [`experiment`].

pub mod experiment;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::apply_temperature;
use crate::model::{
    argmax, CategorySet, ConfusionMatrix, HumanDecision, MachineDecision, PrototypeModel, SentenceRef,
};
use crate::rng;
use crate::EmbeddingMap;

pub use experiment::{run_experiment, ExperimentConfig, ExperimentInput, ExperimentReport, Variant};

// ---------------------------------------------------------------------------
// Human simulator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// A fixed fraction of key sentences is relabeled "Not Key".
    #[default]
    DropToNotkey,
    /// Each label is replaced by a uniform random category with some probability.
    UniformConfusion,
}

impl std::str::FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "drop_to_notkey" | "drop" => Ok(NoiseModel::DropToNotkey),
            "uniform_confusion" | "uniform" => Ok(NoiseModel::UniformConfusion),
            _ => Err(Error::Config(format!(
                "unknown noise model \"{s}\"; expected drop_to_notkey or uniform_confusion"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanSimConfig {
    pub noise_rate: f64,
    pub model: NoiseModel,
    pub seed: u64,
}

impl Default for HumanSimConfig {
    fn default() -> Self {
        HumanSimConfig { noise_rate: 0.1, model: NoiseModel::default(), seed: 0 }
    }
}

/// Noisy copies of `true_labels`.
///
/// Randomness does not depend on `noise_rate`: for a fixed seed the set of
/// corrupted sentences at a lower rate is a subset of the set at a higher rate.
pub fn simulate_human(true_labels: &[usize], categories: usize, cfg: &HumanSimConfig) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&cfg.noise_rate) {
        return Err(Error::Range(format!("noise rate {} not in [0, 1]", cfg.noise_rate)));
    }
    if let Some(l) = true_labels.iter().find(|l| **l >= categories) {
        return Err(Error::Range(format!("label {l} ≥ C = {categories}")));
    }
    let mut out = true_labels.to_vec();
    match cfg.model {
        NoiseModel::DropToNotkey => {
            let mut keys: Vec<usize> = (0..out.len()).filter(|&i| out[i] != 0).collect();
            let mut rng = rng::stream(cfg.seed, "human-drop");
            // Fisher-Yates; the first ⌊r·#keys⌋ positions are dropped.
            for i in (1..keys.len()).rev() {
                let j = rng.random_range(0..=i);
                keys.swap(i, j);
            }
            let n = (cfg.noise_rate * keys.len() as f64).floor() as usize;
            for &i in &keys[..n.min(keys.len())] {
                out[i] = 0;
            }
        }
        NoiseModel::UniformConfusion => {
            let mut rng = rng::stream(cfg.seed, "human-uniform");
            for o in out.iter_mut() {
                let u: f64 = rng.random();
                let replacement = rng.random_range(0..categories);
                if u < cfg.noise_rate {
                    *o = replacement;
                }
            }
        }
    }
    Ok(out)
}

/// Human decisions for the given sentences.
pub fn simulate_human_decisions(
    refs: &[SentenceRef],
    true_labels: &[usize],
    categories: usize,
    cfg: &HumanSimConfig,
) -> Result<Vec<HumanDecision>> {
    let labels = simulate_human(true_labels, categories, cfg)?;
    Ok(refs
        .iter()
        .zip(labels)
        .map(|(r, label)| HumanDecision { sentence_ref: r.clone(), label })
        .collect())
}

/// The confusion matrix a noise model induces at a given rate.
pub fn noise_confusion(model: NoiseModel, rate: f64, categories: usize) -> Result<ConfusionMatrix> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Range(format!("noise rate {rate} not in [0, 1]")));
    }
    let c = categories;
    let mut columns = vec![vec![0.0; c]; c];
    for (y, col) in columns.iter_mut().enumerate() {
        match model {
            NoiseModel::DropToNotkey => {
                if y == 0 {
                    col[0] = 1.0;
                } else {
                    col[y] = 1.0 - rate;
                    col[0] += rate;
                }
            }
            NoiseModel::UniformConfusion => {
                col.iter_mut().for_each(|v| *v = rate / c as f64);
                col[y] += 1.0 - rate;
            }
        }
    }
    ConfusionMatrix::from_columns(&columns)
}

// ---------------------------------------------------------------------------
// Machine simulator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MachineSimConfig {
    pub target_accuracy: f64,
    pub concentration: f64,
    pub overconfidence_scale: f64,
    pub seed: u64,
}

impl Default for MachineSimConfig {
    fn default() -> Self {
        MachineSimConfig {
            target_accuracy: 0.75,
            concentration: 5.0,
            overconfidence_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineSimOutput {
    pub logits: Vec<Vec<f64>>,
    /// `softmax(logits)` before any calibration.
    pub probs: Vec<Vec<f64>>,
    /// Mixing weight between the one-hot anchor and the prior in the Dirichlet mean.
    pub mix: f64,
    /// Dirichlet concentration actually used; raised above the configured
    /// value only when the target sits below the spread-prior accuracy.
    pub concentration: f64,
}

const DIRICHLET_FLOOR: f64 = 0.01;
const PROB_FLOOR: f64 = 1e-12;
const ACCURACY_SAMPLES: usize = 20_000;
const BISECTION_STEPS: usize = 30;
const MAX_CONCENTRATION_SCALE: f64 = 1e3;

/// `ln X` for `X ~ Gamma(shape, 1)`, stable for small shapes.
fn log_gamma_sample(rng: &mut ChaCha8Rng, shape: f64) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).max(f64::MIN_POSITIVE).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = 1.0 - rng.random::<f64>();
        g.max(f64::MIN_POSITIVE).ln() + u.ln() / shape
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|a| log_gamma_sample(rng, *a)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Dirichlet parameters of mixture component `m`.
fn component(m: usize, prior: &[f64], mix: f64, concentration: f64) -> Vec<f64> {
    prior
        .iter()
        .enumerate()
        .map(|(k, pk)| concentration * (mix * f64::from(u8::from(k == m)) + (1.0 - mix) * pk) + DIRICHLET_FLOOR)
        .collect()
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut t = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if t < *w {
            return i;
        }
        t -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Monte-Carlo `E[max p]` under the unconditional machine distribution, which
/// equals its argmax accuracy because the distribution is calibrated.
fn expected_accuracy(prior: &[f64], mix: f64, concentration: f64) -> f64 {
    let mut rng = rng::stream(0, "machine-accuracy");
    let comps: Vec<Vec<f64>> = (0..prior.len()).map(|m| component(m, prior, mix, concentration)).collect();
    let mut total = 0.0;
    for _ in 0..ACCURACY_SAMPLES {
        let m = sample_index(&mut rng, prior);
        let p = dirichlet(&mut rng, &comps[m]);
        total += p.iter().copied().fold(0.0, f64::max);
    }
    total / ACCURACY_SAMPLES as f64
}

/// Draw machine distributions for sentences with the given true labels.
///
/// The unconditional model is a mixture over anchors `m ~ π` (the empirical
/// label prior) of `Dir(κ(λ e_m + (1 - λ) π) + floor)`, with labels
/// `y ~ Cat(p)`; hence `p` is calibrated. Draws conditional on `y` use the
/// exact conjugate update: anchor weights `∝ π_m a_{m,y}` and component
/// `Dir(a_m + e_y)`. `λ` is solved by bisection so that the expected argmax
/// accuracy equals the target; targets below the accuracy at `λ = 0` raise
/// `κ` instead.
pub fn simulate_machine(true_labels: &[usize], categories: usize, cfg: &MachineSimConfig) -> Result<MachineSimOutput> {
    let c = categories;
    if c < 2 {
        return Err(Error::Config(format!("C = {c} < 2")));
    }
    if !(cfg.target_accuracy > 1.0 / c as f64 && cfg.target_accuracy <= 1.0) {
        return Err(Error::Config(format!(
            "target accuracy {} must lie in (1/C, 1] = ({}, 1]",
            cfg.target_accuracy,
            1.0 / c as f64
        )));
    }
    if !(cfg.concentration > 0.0 && cfg.overconfidence_scale > 0.0) {
        return Err(Error::Config("concentration and overconfidence scale must be positive".into()));
    }
    if let Some(l) = true_labels.iter().find(|l| **l >= c) {
        return Err(Error::Range(format!("label {l} ≥ C = {c}")));
    }
    if true_labels.is_empty() {
        return Ok(MachineSimOutput { logits: vec![], probs: vec![], mix: 1.0, concentration: cfg.concentration });
    }

    let mut prior = vec![0.0; c];
    for &y in true_labels {
        prior[y] += 1.0;
    }
    prior.iter_mut().for_each(|p| *p /= true_labels.len() as f64);

    // Below the spread-prior floor, sharpen the prior component instead of mixing.
    let mut concentration = cfg.concentration;
    let mut mix = 0.0;
    if cfg.target_accuracy < expected_accuracy(&prior, 0.0, concentration) {
        let max_scale = MAX_CONCENTRATION_SCALE.ln();
        let floor = expected_accuracy(&prior, 0.0, cfg.concentration * MAX_CONCENTRATION_SCALE);
        if cfg.target_accuracy < floor {
            return Err(Error::Config(format!(
                "target accuracy {} is below the achievable minimum {floor:.4} for this label prior",
                cfg.target_accuracy
            )));
        }
        let (mut lo, mut hi) = (0.0, max_scale);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if expected_accuracy(&prior, 0.0, cfg.concentration * mid.exp()) > cfg.target_accuracy {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        concentration = cfg.concentration * (0.5 * (lo + hi)).exp();
    } else if expected_accuracy(&prior, 1.0, concentration) <= cfg.target_accuracy {
        mix = 1.0;
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if expected_accuracy(&prior, mid, concentration) < cfg.target_accuracy {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        mix = 0.5 * (lo + hi);
    }

    let comps: Vec<Vec<f64>> = (0..c).map(|m| component(m, &prior, mix, concentration)).collect();
    let mut rng = rng::stream(cfg.seed, "machine");
    let mut logits = Vec::with_capacity(true_labels.len());
    let mut probs = Vec::with_capacity(true_labels.len());
    for &y in true_labels {
        let weights: Vec<f64> = (0..c).map(|m| prior[m] * comps[m][y]).collect();
        let m = sample_index(&mut rng, &weights);
        let mut alpha = comps[m].clone();
        alpha[y] += 1.0;
        let p = dirichlet(&mut rng, &alpha);
        let l: Vec<f64> = p.iter().map(|x| cfg.overconfidence_scale * x.max(PROB_FLOOR).ln()).collect();
        probs.push(apply_temperature(&l, 1.0)?);
        logits.push(l);
    }
    Ok(MachineSimOutput { logits, probs, mix, concentration })
}

/// Attach sentence references to distributions.
pub fn machine_decisions(refs: &[SentenceRef], probs: &[Vec<f64>]) -> Vec<MachineDecision> {
    refs.iter()
        .zip(probs)
        .map(|(r, p)| MachineDecision { sentence_ref: r.clone(), probs: p.clone() })
        .collect()
}

// ---------------------------------------------------------------------------
// Ablation combiners
// ---------------------------------------------------------------------------

/// The shared label when both parties agree, otherwise "Not Key".
pub fn combine_intersection(machine_argmax: usize, human_label: usize) -> usize {
    if machine_argmax == human_label {
        human_label
    } else {
        0
    }
}

/// The more important of the two labels.
pub fn combine_union(machine_argmax: usize, human_label: usize, cats: &CategorySet) -> usize {
    if cats.rank(machine_argmax) > cats.rank(human_label) {
        machine_argmax
    } else {
        human_label
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Accuracy plus macro-averaged precision, recall and F1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Macro averages run over the classes present in `truth`; a class with no
/// predicted positives has precision 0.
pub fn metrics(predicted: &[usize], truth: &[usize]) -> Result<Metrics> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(Error::Range(format!(
            "metrics need equal non-empty inputs, got {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    let classes: std::collections::BTreeSet<usize> = truth.iter().copied().collect();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for &k in &classes {
        let tp = predicted.iter().zip(truth).filter(|(p, t)| **p == k && **t == k).count() as f64;
        let pred_pos = predicted.iter().filter(|p| **p == k).count() as f64;
        let true_pos = truth.iter().filter(|t| **t == k).count() as f64;
        let precision = if pred_pos > 0.0 { tp / pred_pos } else { 0.0 };
        let recall = tp / true_pos;
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }
    let k = classes.len() as f64;
    Ok(Metrics {
        accuracy: correct as f64 / n,
        precision: p_sum / k,
        recall: r_sum / k,
        f1: f_sum / k,
    })
}

/// Mean Frobenius distance between the matrix each sentence is assigned by
/// `estimated` and its true matrix, over every sentence in `truth`.
pub fn frobenius_error(
    estimated: &PrototypeModel,
    truth: &BTreeMap<SentenceRef, ConfusionMatrix>,
    embeddings: &EmbeddingMap,
) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Completeness("no sentences with a true confusion matrix".into()));
    }
    let mut total = 0.0;
    for (r, phi) in truth {
        let e = embeddings
            .get(r)
            .ok_or_else(|| Error::Completeness(format!("no embedding for {r}")))?;
        let j = estimated.assign(e)?.prototype;
        total += estimated.confusions[j].frobenius_distance(phi);
    }
    Ok(total / truth.len() as f64)
}

/// Hard label of a distribution, ties to the lowest index.
pub fn machine_argmax(probs: &[f64]) -> usize {
    argmax(probs)
}
