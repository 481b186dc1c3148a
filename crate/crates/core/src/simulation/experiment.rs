//! Seeded ablation harness over noise rates, prototype counts and EM budgets.
//!
//! Per seed the labeled pairs are split into a historical half, which becomes
//! the decision log, and an evaluation half. Machine and human decisions come
//! from the simulators; every variant is scored on key-sentence labels and on
//! pair relations predicted by the selected matcher.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    combine_intersection, combine_union, metrics, noise_confusion, simulate_human, simulate_machine,
    HumanSimConfig, MachineSimConfig, Metrics, NoiseModel,
};
use crate::error::{Error, Result};
use crate::fusion::{apply_temperature, fit_temperature, fuse_probs, CalibrationConfig};
use crate::matcher::{DecisionMode, MatchInput, MatcherRegistry, RelationConfig, REFERENCE_MATCHER};
use crate::model::{argmax, CasePair, CategorySet, ConfusionMatrix, DecisionLog, DecisionRecord, FusedDecision, SentenceRef};
use crate::protoem::{run_naive_em, run_protoem, ProtoEmConfig};
use crate::rng;
use crate::EmbeddingMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    CoMatch,
    HumanOnly,
    MachineOnly,
    Intersection,
    Union,
    NaiveEm,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::CoMatch,
        Variant::HumanOnly,
        Variant::MachineOnly,
        Variant::Intersection,
        Variant::Union,
        Variant::NaiveEm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CoMatch => "co-match",
            Variant::HumanOnly => "human-only",
            Variant::MachineOnly => "machine-only",
            Variant::Intersection => "intersection",
            Variant::Union => "union",
            Variant::NaiveEm => "naive-em",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant \"{s}\"; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub variants: Vec<Variant>,
    pub noise_rates: Vec<f64>,
    pub noise_model: NoiseModel,
    pub prototype_grid: Vec<usize>,
    pub em_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Machine simulator settings; its seed is replaced per run.
    pub machine: MachineSimConfig,
    /// Fit a temperature on the historical split before fusing.
    pub calibrate: bool,
    pub smoothing: f64,
    pub init_epsilon: f64,
    pub relation: RelationConfig,
    pub matcher: String,
    pub match_on: DecisionMode,
    /// Fraction of pairs used as history.
    pub history_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            variants: Variant::ALL.to_vec(),
            noise_rates: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            noise_model: NoiseModel::DropToNotkey,
            prototype_grid: vec![4],
            em_grid: vec![40],
            seeds: vec![0, 1, 2],
            machine: MachineSimConfig::default(),
            calibrate: true,
            smoothing: 1.0,
            init_epsilon: 0.2,
            relation: RelationConfig::default(),
            matcher: REFERENCE_MATCHER.to_string(),
            match_on: DecisionMode::Argmax,
            history_fraction: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        let empty = |name: &str| Error::Config(format!("{name} must not be empty"));
        if self.variants.is_empty() {
            return Err(empty("variants"));
        }
        if self.noise_rates.is_empty() {
            return Err(empty("noise rates"));
        }
        if self.prototype_grid.is_empty() {
            return Err(empty("prototype grid"));
        }
        if self.em_grid.is_empty() {
            return Err(empty("EM grid"));
        }
        if self.seeds.is_empty() {
            return Err(empty("seeds"));
        }
        if let Some(r) = self.noise_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("noise rate {r} not in [0, 1]")));
        }
        if self.prototype_grid.contains(&0) {
            return Err(Error::Config("prototype counts must be ≥ 1".into()));
        }
        if !(self.history_fraction > 0.0 && self.history_fraction < 1.0) {
            return Err(Error::Config(format!("history fraction {} not in (0, 1)", self.history_fraction)));
        }
        self.relation.check()
    }
}

/// Labeled data for an experiment.
pub struct ExperimentInput<'a> {
    pub pairs: &'a [CasePair],
    pub embeddings: &'a EmbeddingMap,
    pub categories: &'a CategorySet,
    /// Generating group of each sentence; all sentences share group 0 when absent.
    pub groups: Option<&'a BTreeMap<SentenceRef, usize>>,
    /// Per-group multiplier on the noise rate (clamped to 1); all ones when empty.
    pub group_noise_multipliers: &'a [f64],
}

/// One variant on one cell for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub noise_rate: f64,
    pub prototypes: usize,
    pub em_iterations: usize,
    pub seed: u64,
    pub variant: Variant,
    pub key: Metrics,
    pub relation: Metrics,
    pub frobenius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub key_mean: Metrics,
    pub key_stdev: Metrics,
    pub relation_mean: Metrics,
    pub relation_stdev: Metrics,
    pub frobenius_mean: Option<f64>,
    pub frobenius_stdev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub noise_rate: f64,
    pub prototypes: usize,
    pub em_iterations: usize,
    pub variants: Vec<VariantSummary>,
}

impl CellSummary {
    pub fn variant(&self, v: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub seed: u64,
    pub temperature: f64,
    pub history_sentences: usize,
    pub evaluation_sentences: usize,
    pub evaluation_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedInfo>,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    pub fn cell(&self, noise_rate: f64, prototypes: usize, em_iterations: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| {
            (c.noise_rate - noise_rate).abs() < 1e-12 && c.prototypes == prototypes && c.em_iterations == em_iterations
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// One row per cell × variant × seed.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| Error::format(None, format!("csv: {e}"));
        w.write_record([
            "noise_rate", "prototypes", "em_iterations", "seed", "variant",
            "key_accuracy", "key_precision", "key_recall", "key_f1",
            "relation_accuracy", "relation_precision", "relation_recall", "relation_f1",
            "frobenius",
        ])
        .map_err(csv_err)?;
        for r in &self.runs {
            let m = |x: f64| x.to_string();
            w.write_record([
                m(r.noise_rate),
                r.prototypes.to_string(),
                r.em_iterations.to_string(),
                r.seed.to_string(),
                r.variant.to_string(),
                m(r.key.accuracy),
                m(r.key.precision),
                m(r.key.recall),
                m(r.key.f1),
                m(r.relation.accuracy),
                m(r.relation.precision),
                m(r.relation.recall),
                m(r.relation.f1),
                r.frobenius.map(m).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// A sentence with everything the harness needs.
struct Item {
    sentence_ref: SentenceRef,
    label: usize,
    group: usize,
    embedding: Vec<f64>,
}

/// Per-seed state shared by every grid cell.
struct SeedState {
    info: SeedInfo,
    history: Vec<usize>,
    evaluation: Vec<usize>,
    eval_pairs: Vec<usize>,
    /// Calibrated machine distribution per item.
    machine: Vec<Vec<f64>>,
}

/// Item ranges of a pair's source and target documents.
type PairSpan = [std::ops::Range<usize>; 2];

fn collect_items(input: &ExperimentInput<'_>) -> Result<(Vec<Item>, Vec<PairSpan>)> {
    let mut items = Vec::new();
    let mut spans = Vec::with_capacity(input.pairs.len());
    for (p, pair) in input.pairs.iter().enumerate() {
        if pair.true_relation.is_none() {
            return Err(Error::Config(format!("pair {p} has no relation label")));
        }
        let mut span = [0..0, 0..0];
        for (d, doc) in pair.documents().into_iter().enumerate() {
            let start = items.len();
            for s in &doc.sentences {
                let r = s.sentence_ref();
                let label = s
                    .true_label
                    .ok_or_else(|| Error::Config(format!("sentence {r} has no label")))?;
                if label >= input.categories.len() {
                    return Err(Error::Range(format!("label {label} of {r} ≥ C")));
                }
                let embedding = input
                    .embeddings
                    .get(&r)
                    .ok_or_else(|| Error::Completeness(format!("no embedding for {r}")))?
                    .clone();
                let group = input.groups.and_then(|g| g.get(&r).copied()).unwrap_or(0);
                items.push(Item { sentence_ref: r, label, group, embedding });
            }
            span[d] = start..items.len();
        }
        spans.push(span);
    }
    Ok((items, spans))
}

fn group_count(items: &[Item]) -> usize {
    items.iter().map(|i| i.group + 1).max().unwrap_or(1)
}

fn indices_by_group(items: &[Item], groups: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); groups];
    for (i, it) in items.iter().enumerate() {
        out[it.group].push(i);
    }
    out
}

fn prepare_seed(
    seed: u64,
    items: &[Item],
    spans: &[[std::ops::Range<usize>; 2]],
    c: usize,
    cfg: &ExperimentConfig,
) -> Result<SeedState> {
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let n_hist = ((spans.len() as f64 * cfg.history_fraction).round() as usize).clamp(1, spans.len().saturating_sub(1).max(1));
    let (hist_pairs, eval_pairs) = order.split_at(n_hist);
    let mut hist_pairs = hist_pairs.to_vec();
    let mut eval_pairs = eval_pairs.to_vec();
    hist_pairs.sort_unstable();
    eval_pairs.sort_unstable();
    let expand = |ps: &[usize]| -> Vec<usize> {
        ps.iter().flat_map(|&p| spans[p].iter().flat_map(|r| r.clone()).collect::<Vec<_>>()).collect()
    };
    let history = expand(&hist_pairs);
    let evaluation = expand(&eval_pairs);

    let groups = indices_by_group(items, group_count(items));
    let mut logits = vec![Vec::new(); items.len()];
    for (g, idx) in groups.iter().enumerate() {
        let labels: Vec<usize> = idx.iter().map(|&i| items[i].label).collect();
        let mcfg = MachineSimConfig { seed: rng::derive_seed_n(seed, "machine", g as u64), ..cfg.machine.clone() };
        let out = simulate_machine(&labels, c, &mcfg)?;
        for (&i, l) in idx.iter().zip(out.logits) {
            logits[i] = l;
        }
    }
    let temperature = if cfg.calibrate {
        let hl: Vec<Vec<f64>> = history.iter().map(|&i| logits[i].clone()).collect();
        let hy: Vec<usize> = history.iter().map(|&i| items[i].label).collect();
        fit_temperature(&hl, &hy, &CalibrationConfig::default())?
    } else {
        1.0
    };
    let machine = logits
        .iter()
        .map(|l| apply_temperature(l, temperature))
        .collect::<Result<Vec<_>>>()?;

    Ok(SeedState {
        info: SeedInfo {
            seed,
            temperature,
            history_sentences: history.len(),
            evaluation_sentences: evaluation.len(),
            evaluation_pairs: eval_pairs.len(),
        },
        history,
        evaluation,
        eval_pairs,
        machine,
    })
}

/// Human labels for every item at one base noise rate.
fn simulate_humans(
    seed: u64,
    items: &[Item],
    rate: f64,
    c: usize,
    model: NoiseModel,
    multipliers: &[f64],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let groups = indices_by_group(items, group_count(items));
    let mut labels = vec![0; items.len()];
    let mut rates = Vec::with_capacity(groups.len());
    for (g, idx) in groups.iter().enumerate() {
        let r = (rate * multipliers.get(g).copied().unwrap_or(1.0)).clamp(0.0, 1.0);
        rates.push(r);
        let truth: Vec<usize> = idx.iter().map(|&i| items[i].label).collect();
        let hcfg = HumanSimConfig { noise_rate: r, model, seed: rng::derive_seed_n(seed, "human", g as u64) };
        for (&i, h) in idx.iter().zip(simulate_human(&truth, c, &hcfg)?) {
            labels[i] = h;
        }
    }
    Ok((labels, rates))
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize_metrics(ms: &[Metrics]) -> (Metrics, Metrics) {
    let f = |g: fn(&Metrics) -> f64| mean_sd(&ms.iter().map(g).collect::<Vec<_>>());
    let (a, sa) = f(|m| m.accuracy);
    let (p, sp) = f(|m| m.precision);
    let (r, sr) = f(|m| m.recall);
    let (f1, sf) = f(|m| m.f1);
    (
        Metrics { accuracy: a, precision: p, recall: r, f1 },
        Metrics { accuracy: sa, precision: sp, recall: sr, f1: sf },
    )
}

#[derive(Clone, Copy)]
struct Cell {
    noise_rate: f64,
    prototypes: usize,
    em_iterations: usize,
}

struct Shared<'a> {
    input: &'a ExperimentInput<'a>,
    items: &'a [Item],
    spans: &'a [[std::ops::Range<usize>; 2]],
    cfg: &'a ExperimentConfig,
    registry: &'a MatcherRegistry,
}

fn run_cell(
    sh: &Shared<'_>,
    state: &SeedState,
    humans: &[usize],
    rates: &[f64],
    cell: Cell,
) -> Result<Vec<RunRecord>> {
    let cfg = sh.cfg;
    let items = sh.items;
    let cats = sh.input.categories;
    let c = cats.len();
    let seed = state.info.seed;

    let log = DecisionLog {
        dimension: items.first().map_or(0, |i| i.embedding.len()),
        category_set: cats.clone(),
        records: state
            .history
            .iter()
            .map(|&i| DecisionRecord {
                sentence_ref: items[i].sentence_ref.clone(),
                embedding: items[i].embedding.clone(),
                human_label: humans[i],
                machine_probs: state.machine[i].clone(),
            })
            .collect(),
    };
    let em_cfg = ProtoEmConfig {
        prototypes: cell.prototypes,
        em_iterations: cell.em_iterations,
        smoothing: cfg.smoothing,
        init_epsilon: cfg.init_epsilon,
        seed: rng::derive_seed(seed, "protoem"),
        convergence_tol: None,
    };
    let needs_proto = cfg.variants.contains(&Variant::CoMatch);
    let needs_naive = cfg.variants.contains(&Variant::NaiveEm);
    let proto = if needs_proto { Some(run_protoem(&log, &em_cfg)?.model) } else { None };
    let naive = if needs_naive { Some(run_naive_em(&log, &em_cfg)?.model) } else { None };

    let truth_phi: Vec<ConfusionMatrix> = rates
        .iter()
        .map(|r| noise_confusion(cfg.noise_model, *r, c))
        .collect::<Result<_>>()?;

    let matcher = sh.registry.get(&cfg.matcher)?;
    let mut records = Vec::with_capacity(cfg.variants.len());
    for &variant in &cfg.variants {
        // Posterior per item (evaluation items only are filled).
        let mut post: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut frob_total = 0.0;
        for &i in &state.evaluation {
            let m = &state.machine[i];
            let h = humans[i];
            let one_hot = |l: usize| {
                let mut v = vec![0.0; c];
                v[l] = 1.0;
                v
            };
            let p = match variant {
                Variant::CoMatch | Variant::NaiveEm => {
                    let model = if variant == Variant::CoMatch { proto.as_ref() } else { naive.as_ref() }
                        .expect("model fitted for requested variant");
                    let j = model.assign(&items[i].embedding)?.prototype;
                    let phi = &model.confusions[j];
                    frob_total += phi.frobenius_distance(&truth_phi[items[i].group]);
                    fuse_probs(m, h, phi).0
                }
                Variant::HumanOnly => one_hot(h),
                Variant::MachineOnly => one_hot(argmax(m)),
                Variant::Intersection => one_hot(combine_intersection(argmax(m), h)),
                Variant::Union => one_hot(combine_union(argmax(m), h, cats)),
            };
            post.insert(i, p);
        }
        let predicted: Vec<usize> = state.evaluation.iter().map(|i| argmax(&post[i])).collect();
        let truth: Vec<usize> = state.evaluation.iter().map(|&i| items[i].label).collect();
        let key = metrics(&predicted, &truth)?;

        let mut rel_pred = Vec::with_capacity(state.eval_pairs.len());
        let mut rel_truth = Vec::with_capacity(state.eval_pairs.len());
        for &p in &state.eval_pairs {
            let pair = &sh.input.pairs[p];
            let fused = |d: usize| -> Vec<FusedDecision> {
                sh.spans[p][d]
                    .clone()
                    .map(|i| FusedDecision::new(items[i].sentence_ref.clone(), post[&i].clone(), false))
                    .collect()
            };
            let (fs, ft) = (cfg.match_on.prepare(&fused(0)), cfg.match_on.prepare(&fused(1)));
            let out = matcher.match_pair(&MatchInput {
                pair,
                fused_source: &fs,
                fused_target: &ft,
                embeddings: sh.input.embeddings,
                config: &cfg.relation,
            })?;
            rel_pred.push(out.relation);
            rel_truth.push(pair.true_relation.expect("checked labeled"));
        }
        let relation = metrics(&rel_pred, &rel_truth)?;
        let frobenius = matches!(variant, Variant::CoMatch | Variant::NaiveEm)
            .then(|| frob_total / state.evaluation.len() as f64);
        records.push(RunRecord {
            noise_rate: cell.noise_rate,
            prototypes: cell.prototypes,
            em_iterations: cell.em_iterations,
            seed,
            variant,
            key,
            relation,
            frobenius,
        });
    }
    Ok(records)
}

/// Run every grid cell for every seed and summarize across seeds.
///
/// Output is a pure function of the inputs, independent of thread count.
pub fn run_experiment(
    input: &ExperimentInput<'_>,
    cfg: &ExperimentConfig,
    registry: &MatcherRegistry,
) -> Result<ExperimentReport> {
    cfg.check()?;
    registry.get(&cfg.matcher)?;
    if input.pairs.len() < 2 {
        return Err(Error::InsufficientData(format!("{} pairs; need at least 2", input.pairs.len())));
    }
    let (items, spans) = collect_items(input)?;
    let c = input.categories.len();
    let shared = Shared { input, items: &items, spans: &spans, cfg, registry };

    let states = cfg
        .seeds
        .par_iter()
        .map(|&s| prepare_seed(s, &items, &spans, c, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for &noise_rate in &cfg.noise_rates {
        for &prototypes in &cfg.prototype_grid {
            for &em_iterations in &cfg.em_grid {
                cells.push(Cell { noise_rate, prototypes, em_iterations });
            }
        }
    }

    // (seed, noise) → human labels, shared across the P and EM axes.
    let human_jobs: Vec<(usize, f64)> = (0..states.len())
        .flat_map(|s| cfg.noise_rates.iter().map(move |&r| (s, r)))
        .collect();
    let humans = human_jobs
        .par_iter()
        .map(|&(s, r)| {
            simulate_humans(states[s].info.seed, &items, r, c, cfg.noise_model, input.group_noise_multipliers)
        })
        .collect::<Result<Vec<_>>>()?;
    let noise_index = |r: f64| cfg.noise_rates.iter().position(|x| *x == r).expect("grid rate");

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|ci| (0..states.len()).map(move |s| (ci, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(ci, s)| {
            let cell = cells[ci];
            let (h, rates) = &humans[s * cfg.noise_rates.len() + noise_index(cell.noise_rate)];
            run_cell(&shared, &states[s], h, rates, cell)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut runs = Vec::new();
    let mut summaries = Vec::with_capacity(cells.len());
    for (ci, cell) in cells.iter().enumerate() {
        let per_seed = &results[ci * states.len()..(ci + 1) * states.len()];
        let mut variants = Vec::with_capacity(cfg.variants.len());
        for (vi, &variant) in cfg.variants.iter().enumerate() {
            let recs: Vec<&RunRecord> = per_seed.iter().map(|r| &r[vi]).collect();
            let (key_mean, key_stdev) = summarize_metrics(&recs.iter().map(|r| r.key).collect::<Vec<_>>());
            let (relation_mean, relation_stdev) =
                summarize_metrics(&recs.iter().map(|r| r.relation).collect::<Vec<_>>());
            let frob: Vec<f64> = recs.iter().filter_map(|r| r.frobenius).collect();
            let (frobenius_mean, frobenius_stdev) = if frob.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_sd(&frob);
                (Some(m), Some(s))
            };
            variants.push(VariantSummary {
                variant,
                key_mean,
                key_stdev,
                relation_mean,
                relation_stdev,
                frobenius_mean,
                frobenius_stdev,
            });
        }
        summaries.push(CellSummary {
            noise_rate: cell.noise_rate,
            prototypes: cell.prototypes,
            em_iterations: cell.em_iterations,
            variants,
        });
        for r in per_seed {
            runs.extend(r.iter().cloned());
        }
    }

    Ok(ExperimentReport {
        config: cfg.clone(),
        seeds: states.into_iter().map(|s| s.info).collect(),
        cells: summaries,
        runs,
    })
}

/// Write `report.json`, `report.csv` and `summary.txt` under `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report.write_json(&dir.join("report.json"))?;
    report.write_csv(&dir.join("report.csv"))?;
    let mut f = std::fs::File::create(dir.join("summary.txt")).map_err(|e| Error::io(dir, e))?;
    for cell in &report.cells {
        for v in &cell.variants {
            writeln!(
                f,
                "noise={} P={} iters={} {:<13} key_acc={:.4}±{:.4} rel_acc={:.4}±{:.4}{}",
                cell.noise_rate,
                cell.prototypes,
                cell.em_iterations,
                v.variant.name(),
                v.key_mean.accuracy,
                v.key_stdev.accuracy,
                v.relation_mean.accuracy,
                v.relation_stdev.accuracy,
                v.frobenius_mean.map(|x| format!(" frob={x:.4}")).unwrap_or_default()
            )
            .map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("both".parse::<Variant>().is_err());
    }

    #[test]
    fn sample_stdev() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_sd(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn config_checks() {
        assert!(ExperimentConfig::default().check().is_ok());
        let bad = ExperimentConfig { seeds: vec![], ..Default::default() };
        assert!(bad.check().is_err());
        let bad = ExperimentConfig { noise_rates: vec![1.5], ..Default::default() };
        assert!(bad.check().is_err());
    }
}
