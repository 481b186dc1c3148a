use std::path::PathBuf;

use clap::Args;
use comatch_core::corpus::{load_corpus, load_json, load_jsonl, save_jsonl};
use comatch_core::embedding::{embed_corpus, import_embeddings, EmbeddingConfig};
use comatch_core::fusion::fuse_document;
use comatch_core::matcher::{DecisionMode, MatchInput, MatcherRegistry};
use comatch_core::rng::derive_seed;
use comatch_core::simulation::{
    machine_decisions, simulate_human_decisions, simulate_machine, HumanSimConfig, MachineSimConfig, NoiseModel,
};
use comatch_core::{CasePair, FusedDecision, HumanDecision, MachineDecision, PrototypeModel, SentenceRef, Validate};
use serde::Serialize;

use crate::config::FileConfig;
use crate::error::{input, CliError, CliResult};

/// Fuse human and machine key-sentence decisions for every corpus sentence.
///
/// Machine and human decisions come from --machine / --human files, or are
/// simulated from the corpus labels when those flags are absent.
#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Prototype model written by `protoem`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Precomputed sentence vectors; the text embedder is used otherwise.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Machine decisions, one {"doc_id", "index", "probs"} per line.
    #[arg(long)]
    machine: Option<PathBuf>,
    /// Human decisions, one {"doc_id", "index", "label"} per line.
    #[arg(long)]
    human: Option<PathBuf>,
    /// Fused decisions output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also predict pair relations.
    #[arg(long = "match")]
    match_pairs: bool,
    /// Relations output [default: relations.jsonl next to --out].
    #[arg(long)]
    relations_out: Option<PathBuf>,
    /// `identity` replaces every confusion matrix with the identity.
    #[arg(long)]
    phi: Option<String>,
    /// Noise rate of simulated humans [default: 0.1].
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    noise_model: Option<String>,
    /// Target accuracy of the simulated machine [default: 0.75].
    #[arg(long)]
    machine_accuracy: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Registered matcher name [default: reference].
    #[arg(long)]
    matcher: Option<String>,
    /// Feed the matcher argmax one-hots or full posteriors.
    #[arg(long)]
    match_on: Option<DecisionMode>,
}

#[derive(Serialize)]
struct RelationRow {
    source: String,
    target: String,
    relation: usize,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostic: Option<String>,
}

/// Every corpus sentence with its label, failing on the first unlabeled one.
fn labeled(pairs: &[CasePair], what: &str) -> CliResult<(Vec<SentenceRef>, Vec<usize>)> {
    let mut refs = Vec::new();
    let mut labels = Vec::new();
    for s in pairs.iter().flat_map(|p| p.documents()).flat_map(|d| &d.sentences) {
        let l = s.true_label.ok_or_else(|| {
            CliError::Usage(format!("{} is unlabeled, so {what} cannot be simulated; pass a file", s.sentence_ref()))
        })?;
        refs.push(s.sentence_ref());
        labels.push(l);
    }
    Ok((refs, labels))
}

pub fn run(args: FuseArgs, cfg: &FileConfig) -> CliResult {
    let sec = &cfg.fuse;
    let need = |v: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str| {
        v.or_else(|| fallback.clone()).ok_or_else(|| CliError::Usage(format!("fuse needs --{flag} <FILE>")))
    };
    let corpus_path = need(args.corpus, &sec.corpus, "corpus")?;
    let model_path = need(args.model, &sec.model, "model")?;
    let out = need(args.out, &sec.out, "out")?;
    let seed = cfg.seed(args.seed, sec.seed)?;

    let pairs = load_corpus(input(&corpus_path)?)?;
    let mut model: PrototypeModel = load_json(input(&model_path)?)?;
    model.validate().into_result()?;
    match args.phi.as_deref().or(sec.phi.as_deref()) {
        None | Some("model") => {}
        Some("identity") => model = model.with_identity_confusions(),
        Some(other) => return Err(CliError::Usage(format!("--phi must be identity or model, got \"{other}\""))),
    }
    let c = model.categories();

    let embeddings = match args.embeddings.or_else(|| sec.embeddings.clone()) {
        Some(p) => import_embeddings(input(&p)?, model.dimension)?,
        None => {
            let docs: Vec<_> = pairs.iter().flat_map(|p| p.documents()).collect();
            embed_corpus(&docs, &EmbeddingConfig { dimension: model.dimension, ..Default::default() })?
        }
    };

    let machine: Vec<MachineDecision> = match args.machine.or_else(|| sec.machine.clone()) {
        Some(p) => load_jsonl(input(&p)?)?,
        None => {
            let (refs, labels) = labeled(&pairs, "machine decisions")?;
            let mcfg = MachineSimConfig {
                target_accuracy: args.machine_accuracy.or(sec.machine_accuracy).unwrap_or(0.75),
                seed: derive_seed(seed, "machine"),
                ..Default::default()
            };
            machine_decisions(&refs, &simulate_machine(&labels, c, &mcfg)?.probs)
        }
    };
    let human: Vec<HumanDecision> = match args.human.or_else(|| sec.human.clone()) {
        Some(p) => load_jsonl(input(&p)?)?,
        None => {
            let (refs, labels) = labeled(&pairs, "human decisions")?;
            let hcfg = HumanSimConfig {
                noise_rate: args.noise.or(sec.noise).unwrap_or(0.1),
                model: match args.noise_model.as_deref().or(sec.noise_model.as_deref()) {
                    Some(m) => m.parse::<NoiseModel>()?,
                    None => NoiseModel::default(),
                },
                seed: derive_seed(seed, "human"),
            };
            simulate_human_decisions(&refs, &labels, c, &hcfg)?
        }
    };

    let mut fused: Vec<Vec<FusedDecision>> = Vec::with_capacity(pairs.len() * 2);
    for doc in pairs.iter().flat_map(|p| p.documents()) {
        fused.push(fuse_document(doc, &machine, &human, &model, &embeddings)?);
    }
    let flat: Vec<&FusedDecision> = fused.iter().flatten().collect();
    save_jsonl(&flat, &out)?;
    log::info!("wrote {} fused decisions to {}", flat.len(), out.display());

    if args.match_pairs || sec.match_pairs.unwrap_or(false) {
        let matcher = MatcherRegistry::new().get(&cfg.matcher_name(args.matcher))?;
        let mode = cfg.match_on(args.match_on);
        let relation = cfg.relation()?;
        let mut rows = Vec::with_capacity(pairs.len());
        for (pair, docs) in pairs.iter().zip(fused.chunks(2)) {
            let (fs, ft) = (mode.prepare(&docs[0]), mode.prepare(&docs[1]));
            let o = matcher.match_pair(&MatchInput {
                pair,
                fused_source: &fs,
                fused_target: &ft,
                embeddings: &embeddings,
                config: &relation,
            })?;
            rows.push(RelationRow {
                source: pair.source.doc_id.clone(),
                target: pair.target.doc_id.clone(),
                relation: o.relation,
                score: o.score,
                diagnostic: o.diagnostic,
            });
        }
        let path = args
            .relations_out
            .or_else(|| sec.relations_out.clone())
            .unwrap_or_else(|| out.with_file_name("relations.jsonl"));
        save_jsonl(&rows, &path)?;
    }
    Ok(())
}
