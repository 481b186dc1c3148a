use std::path::{Path, PathBuf};

use clap::Args;
use comatch_core::corpus::{gen_synthetic, load_corpus, load_json, GeneratorSpec, SyntheticTruth};
use comatch_core::embedding::{embed_corpus, import_embeddings_any, EmbeddingConfig};
use comatch_core::matcher::{DecisionMode, MatcherRegistry};
use comatch_core::simulation::experiment::{run_experiment, write_report, ExperimentConfig, ExperimentInput, Variant};
use comatch_core::simulation::NoiseModel;
use comatch_core::{CasePair, CategorySet, EmbeddingMap};

use super::gen::{EMBEDDINGS_FILE, PAIRS_FILE, TRUTH_FILE};
use crate::config::{parse_noise, FileConfig};
use crate::error::{input, CliError, CliResult};

/// Run the ablation harness over noise rates, prototype counts and EM budgets.
///
/// Data comes from a `gen` output directory (--data), explicit files
/// (--corpus, --embeddings, --truth) or an in-memory preset (--preset).
/// Writes report.json, report.csv and summary.txt into --out.
#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory written by `gen`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate the corpus in memory from this preset, seeded by --seed.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// truth.json from `gen`, for per-prototype noise and Frobenius errors.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise grid: 0.1..0.5, 0.1..0.5:0.2 or 0.1,0.3 [default: 0.1..0.5].
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    noise_model: Option<String>,
    /// `all` or a comma list of co-match, human-only, machine-only, intersection, union, naive-em.
    #[arg(long)]
    variants: Option<String>,
    /// Prototype counts, e.g. 1,2,4,6,8,10 [default: 4].
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    /// EM iteration budgets, e.g. 20,40,60,80,100 [default: 40].
    #[arg(long, value_delimiter = ',')]
    em_grid: Option<Vec<usize>>,
    /// Number of seeds, counted up from --seed [default: 3].
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    machine_accuracy: Option<f64>,
    /// Skip temperature scaling of the simulated machine.
    #[arg(long)]
    no_calibrate: bool,
    #[arg(long)]
    history_fraction: Option<f64>,
    #[arg(long)]
    matcher: Option<String>,
    #[arg(long)]
    match_on: Option<DecisionMode>,
}

struct Loaded {
    pairs: Vec<CasePair>,
    embeddings: EmbeddingMap,
    truth: Option<SyntheticTruth>,
}

fn from_files(corpus: &Path, embeddings: Option<&Path>, truth: Option<&Path>) -> CliResult<Loaded> {
    let pairs = load_corpus(input(corpus)?)?;
    let embeddings = match embeddings {
        Some(p) => import_embeddings_any(input(p)?)?,
        None => {
            let docs: Vec<_> = pairs.iter().flat_map(|p| p.documents()).collect();
            embed_corpus(&docs, &EmbeddingConfig::default())?
        }
    };
    let truth = match truth {
        Some(p) => Some(load_json(input(p)?)?),
        None => None,
    };
    Ok(Loaded { pairs, embeddings, truth })
}

fn parse_variants(text: &str) -> CliResult<Vec<Variant>> {
    if text == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    text.split(',').map(|s| s.trim().parse::<Variant>().map_err(CliError::from)).collect()
}

fn categories_from_labels(pairs: &[CasePair]) -> CliResult<CategorySet> {
    let max = pairs
        .iter()
        .flat_map(|p| p.documents())
        .flat_map(|d| &d.sentences)
        .filter_map(|s| s.true_label)
        .max()
        .unwrap_or(0);
    log::warn!("no truth file; assuming {} generic categories with 0 = Not Key", (max + 1).max(2));
    Ok(CategorySet::generic((max + 1).max(2))?)
}

pub fn run(args: SimulateArgs, cfg: &FileConfig) -> CliResult {
    let sec = &cfg.simulate;
    let out = args
        .out
        .or_else(|| sec.out.clone())
        .ok_or_else(|| CliError::Usage("simulate needs --out <DIR>".into()))?;
    let seed = cfg.seed(args.seed, sec.seed)?;

    let data_dir = args.data.or_else(|| sec.data.clone());
    let corpus = args.corpus.or_else(|| sec.corpus.clone());
    let preset = args.preset.or_else(|| sec.preset.clone());
    let loaded = if let Some(dir) = data_dir {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
        from_files(&dir.join(PAIRS_FILE), opt(EMBEDDINGS_FILE).as_deref(), opt(TRUTH_FILE).as_deref())?
    } else if let Some(corpus) = corpus {
        let emb = args.embeddings.or_else(|| sec.embeddings.clone());
        let truth = args.truth.or_else(|| sec.truth.clone());
        from_files(&corpus, emb.as_deref(), truth.as_deref())?
    } else if let Some(name) = preset {
        let d = gen_synthetic(&GeneratorSpec::preset(&name)?, seed)?;
        Loaded { pairs: d.pairs, embeddings: d.embeddings, truth: Some(d.truth) }
    } else {
        return Err(CliError::Usage("simulate needs --data, --corpus or --preset".into()));
    };
    if let Some(p) = loaded.pairs.iter().position(|p| !p.is_labeled()) {
        return Err(CliError::Data(format!(
            "pair {p} ({} / {}) lacks sentence labels or a relation; simulation needs a labeled corpus",
            loaded.pairs[p].source.doc_id, loaded.pairs[p].target.doc_id
        )));
    }

    let defaults = ExperimentConfig::default();
    let seeds = args.seeds.or(sec.seeds).unwrap_or(defaults.seeds.len() as u64);
    let mut machine = defaults.machine.clone();
    if let Some(a) = args.machine_accuracy.or(sec.machine_accuracy) {
        machine.target_accuracy = a;
    }
    let exp = ExperimentConfig {
        variants: match args.variants.as_deref().or(sec.variants.as_deref()) {
            Some(v) => parse_variants(v)?,
            None => defaults.variants.clone(),
        },
        noise_rates: match args.noise.as_deref().or(sec.noise.as_deref()) {
            Some(n) => parse_noise(n)?,
            None => defaults.noise_rates.clone(),
        },
        noise_model: match args.noise_model.as_deref().or(sec.noise_model.as_deref()) {
            Some(m) => m.parse::<NoiseModel>()?,
            None => defaults.noise_model,
        },
        prototype_grid: args.k_grid.or_else(|| sec.k_grid.clone()).unwrap_or(defaults.prototype_grid.clone()),
        em_grid: args.em_grid.or_else(|| sec.em_grid.clone()).unwrap_or(defaults.em_grid.clone()),
        seeds: (seed..seed.saturating_add(seeds)).collect(),
        machine,
        calibrate: !args.no_calibrate && sec.calibrate.unwrap_or(true),
        relation: cfg.relation()?,
        matcher: cfg.matcher_name(args.matcher),
        match_on: cfg.match_on(args.match_on),
        history_fraction: args.history_fraction.or(sec.history_fraction).unwrap_or(defaults.history_fraction),
        ..defaults
    };
    exp.check()?;

    let categories = match &loaded.truth {
        Some(t) => t.category_set.clone(),
        None => categories_from_labels(&loaded.pairs)?,
    };
    let groups = loaded.truth.as_ref().map(SyntheticTruth::group_map);
    let input = ExperimentInput {
        pairs: &loaded.pairs,
        embeddings: &loaded.embeddings,
        categories: &categories,
        groups: groups.as_ref(),
        group_noise_multipliers: loaded.truth.as_ref().map_or(&[], |t| &t.group_noise_multipliers),
    };
    let report = run_experiment(&input, &exp, &MatcherRegistry::new())?;
    write_report(&report, &out)?;
    log::info!("{} runs written to {}", report.runs.len(), out.display());
    Ok(())
}
