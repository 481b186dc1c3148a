use std::path::PathBuf;

use clap::Args;
use comatch_core::corpus::{gen_synthetic, save_corpus, save_decision_log, save_json, GeneratorSpec};
use comatch_core::embedding::export_embeddings;
use comatch_core::simulation::NoiseModel;

use crate::config::FileConfig;
use crate::error::{input, CliError, CliResult};

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const TRUTH_FILE: &str = "truth.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";

/// Generate a synthetic corpus, its ground truth and a decision log.
///
/// Writes pairs.jsonl, truth.json, log.jsonl and embeddings.jsonl into --out.
#[derive(Debug, Args)]
pub struct GenArgs {
    /// Dataset shape: elam-like (4 categories) or ecail-like (2 categories).
    #[arg(long)]
    preset: Option<String>,
    /// Full generator spec as JSON or TOML; replaces the preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    records_per_prototype: Option<usize>,
    #[arg(long)]
    prototypes: Option<usize>,
    /// Human noise rate used for the true confusion matrices.
    #[arg(long)]
    noise: Option<f64>,
    /// drop_to_notkey or uniform_confusion.
    #[arg(long)]
    noise_model: Option<String>,
    /// Target accuracy of the simulated machine.
    #[arg(long)]
    machine_accuracy: Option<f64>,
}

fn load_spec(path: &std::path::Path) -> CliResult<GeneratorSpec> {
    let text = std::fs::read_to_string(input(path)?)
        .map_err(|e| CliError::Env(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Usage(format!("bad generator spec {}: {e}", path.display())))
}

pub fn run(args: GenArgs, cfg: &FileConfig) -> CliResult {
    let sec = &cfg.gen;
    let out = args
        .out
        .or_else(|| sec.out.clone())
        .ok_or_else(|| CliError::Usage("gen needs --out <DIR>".into()))?;
    let seed = cfg.seed(args.seed, sec.seed)?;
    let mut spec = match args.spec.or_else(|| sec.spec.clone()) {
        Some(path) => load_spec(&path)?,
        None => GeneratorSpec::preset(args.preset.as_deref().or(sec.preset.as_deref()).unwrap_or("elam-like"))?,
    };
    if let Some(v) = args.pairs.or(sec.pairs) {
        spec.pairs = v;
    }
    if let Some(v) = args.records_per_prototype.or(sec.records_per_prototype) {
        spec.records_per_prototype = v;
    }
    if let Some(v) = args.prototypes.or(sec.prototypes) {
        spec.prototypes = v;
    }
    if let Some(v) = args.noise.or(sec.noise) {
        spec.noise_rate = v;
    }
    if let Some(v) = args.noise_model.as_deref().or(sec.noise_model.as_deref()) {
        spec.noise_model = v.parse::<NoiseModel>()?;
    }
    if let Some(v) = args.machine_accuracy.or(sec.machine_accuracy) {
        spec.machine.target_accuracy = v;
    }
    for w in spec.check()? {
        log::warn!("{w}");
    }

    let data = gen_synthetic(&spec, seed)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::Env(format!("cannot create {}: {e}", out.display())))?;
    save_corpus(&data.pairs, &out.join(PAIRS_FILE))?;
    save_json(&data.truth, &out.join(TRUTH_FILE))?;
    save_decision_log(&data.log, &out.join(LOG_FILE))?;
    export_embeddings(&out.join(EMBEDDINGS_FILE), &data.embeddings)?;
    log::info!(
        "wrote {} pairs and {} log records to {}",
        data.pairs.len(),
        data.log.records.len(),
        out.display()
    );
    Ok(())
}
