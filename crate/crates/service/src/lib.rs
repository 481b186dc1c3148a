//! HTTP API for interactive matching sessions.
//!
//! A session wraps one case pair. Machine decisions are computed once at
//! creation, each human label is fused on arrival with the confusion matrix
//! of the sentence's prototype, and a final match call predicts the pair
//! relation. All routes live under `/api/v1`:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create from `{"corpus_index"}` or `{"pair", "machine_probs"?, "embeddings"?}` |
//! | PUT | `/sessions/{id}/decisions` | `[{"doc_id", "index", "label"}]` |
//! | POST | `/sessions/{id}/match` | optional `{"finalize_unmarked": "machine"}` |
//! | GET | `/sessions/{id}` | full session |
//! | GET | `/model` | prototype count and confusion matrices |
//! | GET | `/healthz` | `ok`, or `degraded` without a model |
//!
//! With a data directory, every mutation is appended to `sessions.jsonl` and
//! replayed on start.

pub mod error;
pub mod session;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::Utc;
use comatch_core::embedding::{embed_corpus, EmbeddingConfig};
use comatch_core::matcher::{DecisionMode, Matcher, MatcherRegistry, RelationConfig, REFERENCE_MATCHER};
use comatch_core::simulation::{simulate_machine, MachineSimConfig};
use comatch_core::{
    CasePair, ConfusionMatrix, EmbeddingMap, HumanDecision, ModelConfig, PrototypeModel, SentenceRef, Validate,
};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

pub use error::ApiError;
pub use session::{FusedView, RelationResult, Session, SessionState};
use store::{Event, EventLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Directory for the session event log; sessions are memory-only without it.
    pub data_dir: Option<PathBuf>,
    /// Static UI assets served under `/ui`.
    pub ui_dir: Option<PathBuf>,
    pub matcher: String,
    pub match_on: DecisionMode,
    pub relation: RelationConfig,
    /// Simulator used for labeled corpus sentences without imported probabilities.
    pub machine: MachineSimConfig,
    /// Embedder for sentences without precomputed vectors.
    pub embedding: EmbeddingConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: None,
            ui_dir: None,
            matcher: REFERENCE_MATCHER.to_string(),
            match_on: DecisionMode::Argmax,
            relation: RelationConfig::default(),
            machine: MachineSimConfig::default(),
            embedding: EmbeddingConfig::default(),
        }
    }
}

/// Data loaded before the service starts.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub model: Option<PrototypeModel>,
    pub corpus: Vec<CasePair>,
    pub embeddings: EmbeddingMap,
    /// Imported machine distributions by sentence.
    pub machine_probs: BTreeMap<SentenceRef, Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    Core(#[from] comatch_core::Error),
    #[error("session store: {0}")]
    Io(#[from] std::io::Error),
}

struct Inner {
    config: ServiceConfig,
    model: Option<Arc<PrototypeModel>>,
    corpus: Vec<CasePair>,
    embeddings: EmbeddingMap,
    machine_probs: BTreeMap<SentenceRef, Vec<f64>>,
    matcher: Arc<dyn Matcher>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionState>>>>,
    log: Option<EventLog>,
}

/// Shared, cheaply cloned service state.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn simulate_corpus_machine(
    corpus: &[CasePair],
    categories: usize,
    cfg: &MachineSimConfig,
) -> comatch_core::Result<BTreeMap<SentenceRef, Vec<f64>>> {
    let mut refs = Vec::new();
    let mut labels = Vec::new();
    for doc in corpus.iter().flat_map(CasePair::documents) {
        if let Some(l) = doc.labels() {
            refs.extend(doc.refs());
            labels.extend(l);
        }
    }
    if labels.is_empty() {
        return Ok(BTreeMap::new());
    }
    let out = simulate_machine(&labels, categories, cfg)?;
    Ok(refs.into_iter().zip(out.probs).collect())
}

impl AppState {
    /// Build the state, resolve the matcher and replay any persisted sessions.
    pub fn new(config: ServiceConfig, resources: Resources, registry: &MatcherRegistry) -> Result<Self, StartError> {
        let matcher = registry.get(&config.matcher)?;
        config.relation.check()?;
        let Resources { model, corpus, embeddings, mut machine_probs } = resources;
        if let Some(m) = &model {
            m.validate().into_result()?;
            let simulated = simulate_corpus_machine(&corpus, m.categories(), &config.machine)?;
            for (r, p) in simulated {
                machine_probs.entry(r).or_insert(p);
            }
        }
        let log = config.data_dir.as_deref().map(EventLog::open).transpose()?;
        let state = AppState {
            inner: Arc::new(Inner {
                config,
                model: model.map(Arc::new),
                corpus,
                embeddings,
                machine_probs,
                matcher,
                sessions: RwLock::new(HashMap::new()),
                log,
            }),
        };
        state.replay()?;
        Ok(state)
    }

    fn replay(&self) -> Result<(), StartError> {
        let Some(log) = &self.inner.log else { return Ok(()) };
        let events = log.read()?;
        if events.is_empty() {
            return Ok(());
        }
        let Some(model) = &self.inner.model else {
            log::warn!("{} events not replayed: no model loaded", events.len());
            return Ok(());
        };
        let cfg = &self.inner.config;
        let mut sessions: HashMap<String, SessionState> = HashMap::new();
        for event in events {
            let id = event.session_id().to_string();
            let result = match event {
                Event::Created { session_id, at, pair, machine, embeddings } => {
                    SessionState::create(session_id, pair, machine, embeddings, model, at).map(|s| {
                        sessions.insert(id.clone(), s);
                    })
                }
                Event::Decisions { at, decisions, .. } => match sessions.get_mut(&id) {
                    Some(s) => s.submit(&decisions, model, at).map(drop),
                    None => Err(ApiError::NotFound(id.clone())),
                },
                Event::Matched { at, fill_machine, .. } => match sessions.get_mut(&id) {
                    Some(s) => s
                        .finalize(fill_machine, self.inner.matcher.as_ref(), &cfg.relation, cfg.match_on, at)
                        .map(drop),
                    None => Err(ApiError::NotFound(id.clone())),
                },
            };
            if let Err(e) = result {
                log::warn!("replay of session {id}: {e}");
            }
        }
        log::info!("replayed {} sessions", sessions.len());
        let map = sessions.into_iter().map(|(k, v)| (k, Arc::new(Mutex::new(v)))).collect();
        *self.inner.sessions.try_write().expect("no readers during start-up") = map;
        Ok(())
    }

    pub fn model_loaded(&self) -> bool {
        self.inner.model.is_some()
    }

    /// Force the event log to stable storage.
    pub fn flush(&self) -> std::io::Result<()> {
        self.inner.log.as_ref().map_or(Ok(()), EventLog::sync)
    }

    fn model(&self) -> Result<&Arc<PrototypeModel>, ApiError> {
        self.inner.model.as_ref().ok_or(ApiError::ModelMissing)
    }

    fn record(&self, event: &Event) -> Result<(), ApiError> {
        match &self.inner.log {
            Some(log) => log
                .append(event)
                .map_err(|e| ApiError::Internal(format!("cannot persist session event: {e}"))),
            None => Ok(()),
        }
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<SessionState>>, ApiError> {
        self.inner
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    fn resolve_machine(&self, refs: &[SentenceRef]) -> Result<Vec<Vec<f64>>, ApiError> {
        refs.iter()
            .map(|r| {
                self.inner.machine_probs.get(r).cloned().ok_or_else(|| {
                    ApiError::BadRequest(format!("no machine decision for {r}; supply \"machine_probs\""))
                })
            })
            .collect()
    }

    fn resolve_embeddings(&self, pair: &CasePair, refs: &[SentenceRef], dimension: usize) -> Result<Vec<Vec<f64>>, ApiError> {
        if refs.iter().all(|r| self.inner.embeddings.contains_key(r)) {
            return Ok(refs.iter().map(|r| self.inner.embeddings[r].clone()).collect());
        }
        let cfg = &self.inner.config.embedding;
        if cfg.dimension != dimension {
            return Err(ApiError::BadRequest(format!(
                "no precomputed embeddings for this pair and the embedder dimension {} differs from the model's {dimension}; supply \"embeddings\"",
                cfg.dimension
            )));
        }
        let map = embed_corpus(&[&pair.source, &pair.target], cfg)?;
        Ok(refs.iter().map(|r| map[r].clone()).collect())
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CreateRequest {
    Corpus {
        corpus_index: usize,
    },
    Inline {
        pair: CasePair,
        #[serde(default)]
        machine_probs: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        embeddings: Option<Vec<Vec<f64>>>,
    },
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Session>), ApiError> {
    let model = app.model()?.clone();
    let (pair, machine, embeddings) = match parse(&body)? {
        CreateRequest::Corpus { corpus_index } => {
            let pair = app.inner.corpus.get(corpus_index).cloned().ok_or_else(|| {
                ApiError::BadRequest(format!("corpus index {corpus_index} out of range ({} pairs)", app.inner.corpus.len()))
            })?;
            (pair, None, None)
        }
        CreateRequest::Inline { pair, machine_probs, embeddings } => (pair, machine_probs, embeddings),
    };
    let report = pair.validate();
    if !report.is_empty() {
        return Err(ApiError::BadRequest(format!("invalid pair: {report}")));
    }
    let refs: Vec<SentenceRef> = pair.documents().into_iter().flat_map(|d| d.refs()).collect();
    let machine = match machine {
        Some(m) => m,
        None => app.resolve_machine(&refs)?,
    };
    let embeddings = match embeddings {
        Some(e) => e,
        None => app.resolve_embeddings(&pair, &refs, model.dimension)?,
    };
    let session_id = uuid::Uuid::new_v4().simple().to_string();
    let at = Utc::now();
    let state = SessionState::create(session_id.clone(), pair, machine, embeddings, &model, at)?;
    app.record(&Event::Created {
        session_id: session_id.clone(),
        at,
        pair: state.session.pair.clone(),
        machine: state.session.machine_decisions.iter().map(|m| m.probs.clone()).collect(),
        embeddings: state.embeddings.clone(),
    })?;
    let session = state.session.clone();
    app.inner.sessions.write().await.insert(session_id, Arc::new(Mutex::new(state)));
    Ok((StatusCode::CREATED, Json(session)))
}

#[derive(Serialize)]
struct DecisionsResponse {
    session_id: String,
    fused: Vec<FusedView>,
    unmarked: usize,
}

async fn submit_decisions(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<DecisionsResponse>, ApiError> {
    let model = app.model()?.clone();
    let decisions: Vec<HumanDecision> = parse(&body)?;
    let session = app.session(&id).await?;
    let mut guard = session.lock().await;
    let mut next = guard.clone();
    let at = Utc::now();
    let fused = next.submit(&decisions, &model, at)?;
    app.record(&Event::Decisions { session_id: id.clone(), at, decisions })?;
    *guard = next;
    Ok(Json(DecisionsResponse { session_id: id, fused, unmarked: guard.unmarked() }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchRequest {
    #[serde(default)]
    finalize_unmarked: Option<String>,
}

async fn match_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RelationResult>, ApiError> {
    let req: MatchRequest = if body.iter().all(u8::is_ascii_whitespace) {
        MatchRequest { finalize_unmarked: None }
    } else {
        parse(&body)?
    };
    let fill_machine = match req.finalize_unmarked.as_deref() {
        None => false,
        Some("machine") => true,
        Some(other) => {
            return Err(ApiError::BadRequest(format!("finalize_unmarked must be \"machine\", got \"{other}\"")))
        }
    };
    let session = app.session(&id).await?;
    let mut guard = session.lock().await;
    let mut next = guard.clone();
    let at = Utc::now();
    let cfg = &app.inner.config;
    let result = next.finalize(fill_machine, app.inner.matcher.as_ref(), &cfg.relation, cfg.match_on, at)?;
    app.record(&Event::Matched { session_id: id, at, fill_machine })?;
    *guard = next;
    Ok(Json(result))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Session>, ApiError> {
    let session = app.session(&id).await?;
    let guard = session.lock().await;
    Ok(Json(guard.session.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub prototypes: usize,
    pub dimension: usize,
    pub categories: usize,
    pub confusions: Vec<ConfusionMatrix>,
    pub config: ModelConfig,
}

async fn get_model(State(app): State<AppState>) -> Result<Json<ModelSummary>, ApiError> {
    let m = app.model()?;
    Ok(Json(ModelSummary {
        prototypes: m.prototypes(),
        dimension: m.dimension,
        categories: m.categories(),
        confusions: m.confusions.clone(),
        config: m.config.clone(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
    pub sessions: usize,
}

async fn healthz(State(app): State<AppState>) -> Json<Health> {
    let loaded = app.model_loaded();
    Json(Health {
        status: if loaded { "ok" } else { "degraded" }.to_string(),
        model_loaded: loaded,
        sessions: app.inner.sessions.read().await.len(),
    })
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/decisions", put(submit_decisions))
        .route("/sessions/{id}/match", post(match_session))
        .route("/model", get(get_model))
        .route("/healthz", get(healthz));
    let mut app = Router::new().nest("/api/v1", api);
    if let Some(dir) = &state.inner.config.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.layer(CorsLayer::permissive()).with_state(state)
}

/// Serve until `shutdown` resolves, then sync the event log.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
    state.flush()
}
