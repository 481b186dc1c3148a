//! Machine calibration and human-machine fusion.
//!
//! Given a calibrated machine distribution `M` over C categories, a discrete
//! human label `h` and the human's confusion matrix `φ`, the fused posterior is
//!
//! ```text
//! p(y = j | M, H = h) = φ[h][j] · M[j] / Σ_q φ[h][q] · M[q]
//! ```
//!
//! which assumes H and M are conditionally independent given the true label.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ConfusionMatrix, Document, FusedDecision, HumanDecision, MachineDecision, PrototypeModel,
    SentenceRef,
};
use crate::EmbeddingMap;

/// Denominators below this fall back to the machine distribution.
pub const FUSION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub temperature: f64,
    pub fit_bounds: (f64, f64),
    pub fit_tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            temperature: 1.0,
            fit_bounds: (0.05, 10.0),
            fit_tolerance: 1e-4,
        }
    }
}

fn log_softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Numeric(format!("temperature {temperature} must be positive")));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(scaled.iter().map(|x| x - lse).collect())
}

/// `softmax(logits / temperature)`.
pub fn apply_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let mut p: Vec<f64> = log_softmax(logits, temperature)?.into_iter().map(f64::exp).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    Ok(p)
}

/// Mean negative log-likelihood of `labels` under temperature-scaled logits.
pub fn mean_nll(logits: &[Vec<f64>], labels: &[usize], temperature: f64) -> Result<f64> {
    let mut total = 0.0;
    for (l, &y) in logits.iter().zip(labels) {
        let lp = log_softmax(l, temperature)?;
        total -= lp[y];
    }
    Ok(total / logits.len() as f64)
}

/// Fit a temperature by golden-section search on the mean NLL.
pub fn fit_temperature(logits: &[Vec<f64>], labels: &[usize], cfg: &CalibrationConfig) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Range(format!("{} logit rows for {} labels", logits.len(), labels.len())));
    }
    if logits.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "temperature fitting needs ≥ 10 labeled examples, got {}",
            logits.len()
        )));
    }
    if let Some((i, _)) = logits.iter().zip(labels).enumerate().find(|(_, (l, y))| **y >= l.len()) {
        return Err(Error::Range(format!("label of example {i} out of range")));
    }
    let (mut a, mut b) = cfg.fit_bounds;
    if !(a > 0.0 && a < b) {
        return Err(Error::Config(format!("invalid temperature bounds ({a}, {b})")));
    }
    let nll = |t: f64| mean_nll(logits, labels, t);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = nll(c)?;
    let mut fd = nll(d)?;
    while b - a > cfg.fit_tolerance {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = nll(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = nll(d)?;
        }
    }
    let t = 0.5 * (a + b);
    let (lo, hi) = cfg.fit_bounds;
    if (lo..=hi).contains(&1.0) && nll(1.0)? < nll(t)? {
        return Ok(1.0);
    }
    Ok(t)
}

/// Fused posterior over categories. Returns `(posterior, fallback_used)`.
pub fn fuse_probs(machine: &[f64], human_label: usize, phi: &ConfusionMatrix) -> (Vec<f64>, bool) {
    let likelihood = phi.row(human_label);
    let joint: Vec<f64> = likelihood.iter().zip(machine).map(|(l, m)| l * m).collect();
    let denom: f64 = joint.iter().sum();
    if denom < FUSION_EPS {
        return (machine.to_vec(), true);
    }
    (joint.into_iter().map(|x| x / denom).collect(), false)
}

/// Combine one machine and one human decision for the same sentence.
pub fn fuse(machine: &MachineDecision, human: &HumanDecision, phi: &ConfusionMatrix) -> FusedDecision {
    let (posterior, fallback) = fuse_probs(&machine.probs, human.label, phi);
    FusedDecision::new(machine.sentence_ref.clone(), posterior, fallback)
}

/// Fuse every sentence of `doc`, looking up each sentence's confusion matrix
/// through its nearest prototype.
pub fn fuse_document(
    doc: &Document,
    machine_decisions: &[MachineDecision],
    human_decisions: &[HumanDecision],
    model: &PrototypeModel,
    embeddings: &EmbeddingMap,
) -> Result<Vec<FusedDecision>> {
    let machine: HashMap<&SentenceRef, &MachineDecision> =
        machine_decisions.iter().map(|m| (&m.sentence_ref, m)).collect();
    let human: HashMap<&SentenceRef, &HumanDecision> =
        human_decisions.iter().map(|h| (&h.sentence_ref, h)).collect();
    let c = model.categories();

    doc.refs()
        .map(|r| {
            let m = machine
                .get(&r)
                .ok_or_else(|| Error::Completeness(format!("no machine decision for {r}")))?;
            let h = human
                .get(&r)
                .ok_or_else(|| Error::Completeness(format!("no human decision for {r}")))?;
            let e = embeddings
                .get(&r)
                .ok_or_else(|| Error::Completeness(format!("no embedding for {r}")))?;
            if h.label >= c || m.probs.len() != c {
                return Err(Error::Range(format!("decision for {r} does not match C = {c}")));
            }
            let proto = model.assign(e)?;
            if proto.degenerate {
                log::warn!("{r}: degenerate embedding routed to prototype 0");
            }
            Ok(fuse(m, h, &model.confusions[proto.prototype]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Dirichlet, Distribution};

    fn sref(i: usize) -> SentenceRef {
        SentenceRef::new("d", i)
    }

    fn phi_example() -> ConfusionMatrix {
        ConfusionMatrix::new(vec![vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap()
    }

    #[test]
    fn temperature_examples() {
        let p = apply_temperature(&[2.0, 0.0], 2.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.731_058_578_630_004_9, epsilon = 1e-4);
        assert_abs_diff_eq!(p[1], 0.268_941_421_369_995_1, epsilon = 1e-4);

        let logits = [0.3, -1.2, 2.0];
        let plain: Vec<f64> = {
            let e: Vec<f64> = logits.iter().map(|x: &f64| x.exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        };
        for (a, b) in apply_temperature(&logits, 1.0).unwrap().iter().zip(&plain) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }

        let hot = apply_temperature(&[5.0, 0.0], 1e6).unwrap();
        assert_abs_diff_eq!(hot[0], 0.5, epsilon = 1e-5);

        assert!(matches!(apply_temperature(&[f64::NAN, 0.0], 1.0), Err(Error::Numeric(_))));
        assert!(matches!(apply_temperature(&[1.0, 0.0], 0.0), Err(Error::Numeric(_))));
    }

    /// Logits whose softmax is the true class posterior: labels are drawn from it.
    fn calibrated_set(seed: u64, n: usize, scale: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dir = Dirichlet::new([0.7, 0.7, 0.7]).unwrap();
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let p: [f64; 3] = dir.sample(&mut rng);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = 2;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    y = k;
                    break;
                }
            }
            logits.push(p.iter().map(|x| scale * x.max(1e-12).ln()).collect());
            labels.push(y);
        }
        (logits, labels)
    }

    #[test]
    fn fit_recovers_calibrated_and_scaled_temperatures() {
        let cfg = CalibrationConfig::default();
        let (logits, labels) = calibrated_set(1, 5000, 1.0);
        let t = fit_temperature(&logits, &labels, &cfg).unwrap();
        assert!((t - 1.0).abs() < 0.1, "T = {t}");

        let scaled: Vec<Vec<f64>> = logits.iter().map(|l| l.iter().map(|x| 3.0 * x).collect()).collect();
        let t3 = fit_temperature(&scaled, &labels, &cfg).unwrap();
        assert!((t3 - 3.0).abs() < 0.3, "T = {t3}");
        assert!(mean_nll(&scaled, &labels, t3).unwrap() <= mean_nll(&scaled, &labels, 1.0).unwrap());
    }

    #[test]
    fn fit_needs_ten_examples() {
        let (logits, labels) = calibrated_set(2, 9, 1.0);
        assert!(matches!(
            fit_temperature(&logits, &labels, &CalibrationConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn hand_derived_fusion() {
        let m = MachineDecision { sentence_ref: sref(0), probs: vec![0.6, 0.4] };
        let h = HumanDecision { sentence_ref: sref(0), label: 0 };
        let f = fuse(&m, &h, &phi_example());
        assert_abs_diff_eq!(f.posterior[0], 0.54 / 0.62, epsilon = 1e-12);
        assert_abs_diff_eq!(f.posterior[0], 0.87097, epsilon = 1e-5);
        assert_abs_diff_eq!(f.posterior[1], 0.12903, epsilon = 1e-5);
        assert_eq!(f.argmax_label, 0);
        assert!(!f.fallback_used);
    }

    #[test]
    fn identity_and_uniform_confusions() {
        let m = MachineDecision { sentence_ref: sref(0), probs: vec![0.3, 0.7] };
        let h = HumanDecision { sentence_ref: sref(0), label: 1 };
        let f = fuse(&m, &h, &ConfusionMatrix::identity(2));
        assert_eq!(f.posterior, vec![0.0, 1.0]);

        let m = MachineDecision { sentence_ref: sref(0), probs: vec![0.1, 0.2, 0.3, 0.4] };
        let h = HumanDecision { sentence_ref: sref(0), label: 2 };
        let f = fuse(&m, &h, &ConfusionMatrix::uniform(4));
        for (a, b) in f.posterior.iter().zip(&m.probs) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_denominator_falls_back_to_machine() {
        let m = MachineDecision { sentence_ref: sref(0), probs: vec![1.0, 0.0] };
        let h = HumanDecision { sentence_ref: sref(0), label: 1 };
        let f = fuse(&m, &h, &ConfusionMatrix::identity(2));
        assert!(f.fallback_used);
        assert_eq!(f.posterior, vec![1.0, 0.0]);
    }

    fn two_prototype_model() -> PrototypeModel {
        PrototypeModel {
            dimension: 2,
            centroids: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            confusions: vec![phi_example(), ConfusionMatrix::uniform(2)],
            config: ModelConfig { prototypes: 2, em_iterations: 40, smoothing: 1.0, init_epsilon: 0.2, seed: 0 },
        }
    }

    #[test]
    fn document_fusion_uses_nearest_prototype() {
        let doc = Document::from_texts("d", [("a", None), ("b", None)]);
        let machine: Vec<_> = (0..2).map(|i| MachineDecision { sentence_ref: sref(i), probs: vec![0.6, 0.4] }).collect();
        let human: Vec<_> = (0..2).map(|i| HumanDecision { sentence_ref: sref(i), label: 0 }).collect();
        let emb: EmbeddingMap = [(sref(0), vec![0.1, 0.9]), (sref(1), vec![0.9, 0.1])].into_iter().collect();
        let fused = fuse_document(&doc, &machine, &human, &two_prototype_model(), &emb).unwrap();
        assert_abs_diff_eq!(fused[0].posterior[0], 0.87097, epsilon = 1e-5);
        assert_abs_diff_eq!(fused[1].posterior[0], 0.6, epsilon = 1e-12);

        let err = fuse_document(&doc, &machine[..1], &human, &two_prototype_model(), &emb).unwrap_err();
        assert!(matches!(err, Error::Completeness(_)));
    }

    #[test]
    fn single_prototype_document_fusion_matches_plain_fuse() {
        let mut model = two_prototype_model();
        model.centroids.truncate(1);
        model.confusions.truncate(1);
        model.config.prototypes = 1;
        let doc = Document::from_texts("d", [("a", None), ("b", None), ("c", None)]);
        let machine: Vec<_> = (0..3)
            .map(|i| MachineDecision { sentence_ref: sref(i), probs: vec![0.2 + 0.2 * i as f64, 0.8 - 0.2 * i as f64] })
            .collect();
        let human: Vec<_> = (0..3).map(|i| HumanDecision { sentence_ref: sref(i), label: i % 2 }).collect();
        let emb: EmbeddingMap = (0..3).map(|i| (sref(i), vec![i as f64, 1.0])).collect();
        let fused = fuse_document(&doc, &machine, &human, &model, &emb).unwrap();
        for i in 0..3 {
            assert_eq!(fused[i], fuse(&machine[i], &human[i], &model.confusions[0]));
        }
    }

    #[test]
    fn perfect_human_on_non_key_document() {
        let doc = Document::from_texts("d", (0..4).map(|_| ("x", Some(0))));
        let mut model = two_prototype_model();
        model.confusions = vec![ConfusionMatrix::identity(2); 2];
        let machine: Vec<_> = (0..4).map(|i| MachineDecision { sentence_ref: sref(i), probs: vec![0.1, 0.9] }).collect();
        let human: Vec<_> = (0..4).map(|i| HumanDecision { sentence_ref: sref(i), label: 0 }).collect();
        let emb: EmbeddingMap = (0..4).map(|i| (sref(i), vec![1.0, i as f64])).collect();
        let fused = fuse_document(&doc, &machine, &human, &model, &emb).unwrap();
        assert!(fused.iter().all(|f| f.argmax_label == 0));
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize)> {
        prop_oneof![Just(2usize), Just(4usize)].prop_flat_map(|c| {
            (
                prop::collection::vec(prop::collection::vec(0.01f64..1.0, c), c),
                prop::collection::vec(0.01f64..1.0, c),
                0..c,
            )
        })
    }

    fn normalize_columns(raw: Vec<Vec<f64>>) -> ConfusionMatrix {
        let c = raw.len();
        let sums: Vec<f64> = (0..c).map(|y| raw.iter().map(|r| r[y]).sum()).collect();
        ConfusionMatrix::new(raw.iter().map(|r| r.iter().zip(&sums).map(|(v, s)| v / s).collect()).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn posterior_is_a_distribution((raw, m, h) in arb_instance()) {
            let phi = normalize_columns(raw);
            let s: f64 = m.iter().sum();
            let m: Vec<f64> = m.iter().map(|x| x / s).collect();
            let (p, _) = fuse_probs(&m, h, &phi);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn scale_invariance((raw, m, h) in arb_instance(), k in 0.01f64..100.0) {
            let phi = normalize_columns(raw);
            let s: f64 = m.iter().sum();
            let base: Vec<f64> = m.iter().map(|x| x / s).collect();
            let scaled: Vec<f64> = m.iter().map(|x| x * k).collect();
            let s2: f64 = scaled.iter().sum();
            let rescaled: Vec<f64> = scaled.iter().map(|x| x / s2).collect();
            let (a, _) = fuse_probs(&base, h, &phi);
            let (b, _) = fuse_probs(&rescaled, h, &phi);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_equivariance((raw, m, h) in arb_instance(), shift in 1usize..4) {
            let phi = normalize_columns(raw);
            let c = phi.categories();
            let pi = |i: usize| (i + shift) % c;
            let s: f64 = m.iter().sum();
            let m: Vec<f64> = m.iter().map(|x| x / s).collect();
            let mut pm = vec![0.0; c];
            let mut pphi = vec![vec![0.0; c]; c];
            for i in 0..c {
                pm[pi(i)] = m[i];
                for j in 0..c {
                    pphi[pi(i)][pi(j)] = phi.get(i, j);
                }
            }
            let pphi = ConfusionMatrix::new(pphi).unwrap();
            let (p, _) = fuse_probs(&m, h, &phi);
            let (q, _) = fuse_probs(&pm, pi(h), &pphi);
            for i in 0..c {
                prop_assert!((p[i] - q[pi(i)]).abs() < 1e-12);
            }
        }
    }
}
