use std::path::PathBuf;

use clap::Args;
use comatch_core::corpus::{load_decision_log, save_json};
use comatch_core::protoem::{run_naive_em, run_protoem, write_trace, ProtoEmConfig};

use crate::config::FileConfig;
use crate::error::{input, CliError, CliResult};

/// Fit per-prototype confusion matrices to a decision log.
///
/// Writes the prototype model to --out and the per-iteration EM trace to
/// --trace (default: the model path with extension .trace.jsonl).
#[derive(Debug, Args)]
pub struct ProtoemArgs {
    /// Decision log (JSON Lines with a header line).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Number of prototypes P [default: 4].
    #[arg(long)]
    prototypes: Option<usize>,
    /// EM iterations per prototype [default: 40].
    #[arg(long)]
    iters: Option<usize>,
    /// Additive smoothing of the M-step [default: 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Off-diagonal mass of the initial matrices [default: 0.2].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Stop a prototype early once no entry moves by more than this.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// One global matrix (same as --prototypes 1).
    #[arg(long)]
    naive: bool,
}

pub fn run(args: ProtoemArgs, cfg: &FileConfig) -> CliResult {
    let sec = &cfg.protoem;
    let log_path = args
        .log
        .or_else(|| sec.log.clone())
        .ok_or_else(|| CliError::Usage("protoem needs --log <FILE>".into()))?;
    let out = args
        .out
        .or_else(|| sec.out.clone())
        .ok_or_else(|| CliError::Usage("protoem needs --out <FILE>".into()))?;
    let defaults = ProtoEmConfig::default();
    let em = ProtoEmConfig {
        prototypes: args.prototypes.or(sec.prototypes).unwrap_or(defaults.prototypes),
        em_iterations: args.iters.or(sec.iters).unwrap_or(defaults.em_iterations),
        smoothing: args.alpha.or(sec.alpha).unwrap_or(defaults.smoothing),
        init_epsilon: args.epsilon.or(sec.epsilon).unwrap_or(defaults.init_epsilon),
        seed: cfg.seed(args.seed, sec.seed)?,
        convergence_tol: args.tol.or(sec.tol),
    };
    let naive = args.naive || sec.naive.unwrap_or(false);

    let log = load_decision_log(input(&log_path)?)?;
    let output = if naive { run_naive_em(&log, &em)? } else { run_protoem(&log, &em)? };
    for w in &output.warnings {
        log::warn!("{w}");
    }
    save_json(&output.model, &out)?;
    let trace = args
        .trace
        .or_else(|| sec.trace.clone())
        .unwrap_or_else(|| out.with_extension("trace.jsonl"));
    write_trace(&trace, &output.trace)?;
    log::info!("prototype sizes {:?}; model written to {}", output.prototype_sizes, out.display());
    Ok(())
}
