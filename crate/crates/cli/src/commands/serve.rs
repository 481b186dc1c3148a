use std::path::PathBuf;

use clap::Args;
use comatch_core::corpus::{load_corpus, load_json, load_jsonl};
use comatch_core::embedding::import_embeddings_any;
use comatch_core::matcher::{DecisionMode, MatcherRegistry};
use comatch_core::MachineDecision;
use comatch_service::{AppState, Resources, ServiceConfig, StartError};

use crate::config::FileConfig;
use crate::error::{input, CliError, CliResult};

/// Serve the interactive session API under /api/v1.
///
/// Without --model the service starts degraded: health reports it and session
/// creation answers 503.
#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Prototype model written by `protoem`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Corpus whose pairs can be opened by index.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Machine decisions, one {"doc_id", "index", "probs"} per line.
    #[arg(long)]
    machine: Option<PathBuf>,
    /// Listen address [default: 127.0.0.1:8787].
    #[arg(long)]
    addr: Option<String>,
    /// Directory for the session event log.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Static web UI assets served under /ui.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    /// Seed of the machine simulator for labeled corpus sentences.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    matcher: Option<String>,
    #[arg(long)]
    match_on: Option<DecisionMode>,
}

async fn shutdown_signal() {
    let interrupt = async {
        if let Err(e) = tokio::signal::ctrl_c().await {
            log::error!("cannot listen for SIGINT: {e}");
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = interrupt => {},
        _ = terminate => {},
    }
    log::info!("shutting down");
}

pub fn run(args: ServeArgs, cfg: &FileConfig) -> CliResult {
    let sec = &cfg.serve;
    let mut resources = Resources::default();
    if let Some(p) = args.model.or_else(|| sec.model.clone()) {
        resources.model = Some(load_json(input(&p)?)?);
    }
    if let Some(p) = args.corpus.or_else(|| sec.corpus.clone()) {
        resources.corpus = load_corpus(input(&p)?)?;
    }
    if let Some(p) = args.embeddings.or_else(|| sec.embeddings.clone()) {
        resources.embeddings = import_embeddings_any(input(&p)?)?;
    }
    if let Some(p) = args.machine.or_else(|| sec.machine.clone()) {
        let rows: Vec<MachineDecision> = load_jsonl(input(&p)?)?;
        resources.machine_probs = rows.into_iter().map(|m| (m.sentence_ref, m.probs)).collect();
    }
    let defaults = ServiceConfig::default();
    let config = ServiceConfig {
        data_dir: args.data_dir.or_else(|| sec.data_dir.clone()),
        ui_dir: args.ui_dir.or_else(|| sec.ui_dir.clone()),
        matcher: cfg.matcher_name(args.matcher),
        match_on: cfg.match_on(args.match_on),
        relation: cfg.relation()?,
        machine: comatch_core::simulation::MachineSimConfig {
            seed: cfg.seed(args.seed, None)?,
            ..defaults.machine.clone()
        },
        ..defaults
    };
    let addr = args.addr.or_else(|| sec.addr.clone()).unwrap_or_else(|| "127.0.0.1:8787".into());

    let state = AppState::new(config, resources, &MatcherRegistry::new()).map_err(|e| match e {
        StartError::Core(e) => CliError::from(e),
        StartError::Io(e) => CliError::Env(format!("session store: {e}")),
    })?;
    if !state.model_loaded() {
        log::warn!("no --model given; the service is degraded");
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Env(format!("cannot start the async runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Env(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Env(e.to_string()))?;
        eprintln!("comatch: listening on http://{local}/api/v1");
        comatch_service::serve(listener, state, shutdown_signal())
            .await
            .map_err(|e| CliError::Env(format!("server error: {e}")))
    })
}
