//! HTTP service: completion, sampling, model listing, health and hot reload.
//!
//! Models live in a copy-on-write registry. A reload marks the entry as loading
//! (requests for it get 503) and swaps the new model in when the checkpoint is read;
//! a failed reload restores the previous model.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use arc_swap::ArcSwap;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use strokegan::checkpoint::Checkpoint;
use strokegan::config::ModelKind;
use strokegan::eval::ske_score_report;
use strokegan::model::TrainedModel;
use strokegan::render::render_grid;
use strokegan::skegan::Temperature;
use strokegan::stroke::{ske_score, Sketch, SkeScore, StrokePoint3};
use strokegan::{seeded_rng, Error as CoreError, Real};
use tower_http::services::ServeDir;

pub const MAX_SAMPLE_COUNT: usize = 64;

#[derive(Clone)]
pub enum Entry {
    Ready(Arc<TrainedModel>),
    Loading,
}

#[derive(Default)]
pub struct Registry {
    entries: ArcSwap<BTreeMap<String, Entry>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    fn set(&self, name: &str, entry: Option<Entry>) {
        self.entries.rcu(|m| {
            let mut m = BTreeMap::clone(m);
            match &entry {
                Some(e) => m.insert(name.to_string(), e.clone()),
                None => m.remove(name),
            };
            m
        });
    }

    pub fn insert(&self, name: &str, model: TrainedModel) {
        self.set(name, Some(Entry::Ready(Arc::new(model))));
    }

    pub fn mark_loading(&self, name: &str) -> Option<Entry> {
        let previous = self.get(name);
        self.set(name, Some(Entry::Loading));
        previous
    }

    /// Reads a checkpoint into `name`. On failure the previous entry is put back.
    pub fn load(&self, name: &str, path: &std::path::Path) -> anyhow::Result<()> {
        let previous = self.mark_loading(name);
        match Checkpoint::load(path).and_then(|c| c.to_model()) {
            Ok(m) => {
                self.insert(name, m);
                Ok(())
            }
            Err(e) => {
                self.set(name, previous);
                Err(anyhow::Error::new(e).context(format!("loading {}", path.display())))
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<Entry> {
        self.entries.load().get(name).cloned()
    }

    pub fn snapshot(&self) -> Arc<BTreeMap<String, Entry>> {
        self.entries.load_full()
    }
}

pub struct AppState {
    pub registry: Registry,
    /// Checkpoint path per model, used by reload.
    pub paths: BTreeMap<String, PathBuf>,
    /// `Some` switches to deterministic per-request seeds.
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::TooLong { .. } | CoreError::InvalidArgument(_) | CoreError::InvalidRecord { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn default_completion_tau() -> f64 {
    0.25
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    #[serde(default = "default_completion_tau")]
    pub tau: f64,
    pub strokes: Vec<StrokePoint3>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub model: String,
    pub tau: f64,
    /// Prefix followed by the generated continuation, in request units.
    pub strokes: Vec<StrokePoint3>,
    pub prefix_len: usize,
    pub terminated: bool,
    pub ske_score: SkeScore,
    pub generation_id: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleQuery {
    pub model: String,
    pub tau: Option<f64>,
    pub count: Option<usize>,
    /// `json` (default) or `svg`.
    pub format: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleResponse {
    pub model: String,
    pub tau: f64,
    pub sketches: Vec<Vec<StrokePoint3>>,
    pub ske_scores: Vec<SkeScore>,
    pub generation_id: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    /// `ready` or `loading`.
    pub status: String,
    pub kind: Option<ModelKind>,
    pub n_max: Option<usize>,
    pub category: Option<String>,
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/complete", post(complete))
        .route("/v1/sample", get(sample))
        .route("/v1/models", get(models))
        .route("/v1/models/{name}/reload", post(reload))
        .route("/v1/health", get(health))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn ready_model(state: &AppState, name: &str) -> ApiResult<Arc<TrainedModel>> {
    match state.registry.get(name) {
        Some(Entry::Ready(m)) => Ok(m),
        Some(Entry::Loading) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("model {name:?} is loading"))),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown model {name:?}"))),
    }
}

fn check_tau(tau: f64) -> ApiResult<Temperature> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(ApiError::bad_request(format!("tau must be in (0, 1], got {tau}")));
    }
    Ok(Temperature::new(tau as Real)?)
}

/// Per-request seed: a hash of the request under the server seed, or fresh entropy.
fn request_seed<T: Hash>(server_seed: Option<u64>, key: T) -> u64 {
    match server_seed {
        Some(s) => {
            let mut h = DefaultHasher::new();
            s.hash(&mut h);
            key.hash(&mut h);
            h.finish()
        }
        None => rand::random(),
    }
}

fn stroke_key(strokes: &[StrokePoint3]) -> Vec<(u64, u64, bool)> {
    strokes.iter().map(|p| (p.dx.to_bits(), p.dy.to_bits(), p.lift)).collect()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("generation task failed: {e}")))?
}

async fn complete(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<CompletionResponse>> {
    let req: CompletionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request: {e}")))?;
    let tau = check_tau(req.tau)?;
    if req.strokes.is_empty() {
        return Err(ApiError::bad_request("strokes must not be empty"));
    }
    if req.strokes.iter().any(|p| !(p.dx.is_finite() && p.dy.is_finite())) {
        return Err(ApiError::bad_request("stroke offsets must be finite"));
    }
    let model = ready_model(&state, &req.model)?;
    if req.strokes.len() > model.n_max {
        return Err(ApiError::bad_request(format!("prefix has {} points, model limit is {}", req.strokes.len(), model.n_max)));
    }
    let seed = request_seed(state.seed, (&req.model, req.tau.to_bits(), stroke_key(&req.strokes)));
    blocking(move || {
        let strokes = model.complete_strokes(&req.strokes, tau, &mut seeded_rng(seed))?;
        let sketch = Sketch::from_stroke3(&strokes, model.category.clone());
        let terminated = strokes.len() < model.n_max || TrainedModel::terminated(&sketch);
        Ok(Json(CompletionResponse {
            model: req.model,
            tau: req.tau,
            prefix_len: req.strokes.len(),
            ske_score: ske_score(&sketch),
            terminated,
            strokes,
            generation_id: format!("{seed:016x}"),
        }))
    })
    .await
}

async fn sample(State(state): State<Arc<AppState>>, Query(q): Query<SampleQuery>) -> ApiResult<Response> {
    let tau_value = q.tau.unwrap_or(0.4);
    let tau = check_tau(tau_value)?;
    let count = q.count.unwrap_or(1);
    if count == 0 || count > MAX_SAMPLE_COUNT {
        return Err(ApiError::bad_request(format!("count must be in 1..={MAX_SAMPLE_COUNT}")));
    }
    let svg = match q.format.as_deref() {
        None | Some("json") => false,
        Some("svg") => true,
        Some(other) => return Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    };
    let model = ready_model(&state, &q.model)?;
    let seed = request_seed(state.seed, (&q.model, tau_value.to_bits(), count));
    blocking(move || {
        let sketches = model.sample(count, tau, &mut seeded_rng(seed))?;
        if svg {
            let rows: Vec<Vec<Sketch>> = sketches.chunks(8).map(<[Sketch]>::to_vec).collect();
            return Ok(([(header::CONTENT_TYPE, "image/svg+xml")], render_grid(&rows, 128.0, 1.5)).into_response());
        }
        let s = model.offset_scale;
        let body = SampleResponse {
            model: q.model,
            tau: tau_value,
            ske_scores: sketches.iter().map(ske_score).collect(),
            sketches: sketches
                .iter()
                .map(|sk| sk.to_stroke3().into_iter().map(|p| StrokePoint3::new(p.dx * s, p.dy * s, p.lift)).collect())
                .collect(),
            generation_id: format!("{seed:016x}"),
        };
        if let Ok(r) = ske_score_report(&sketches) {
            log::debug!("sampled {count}: {r}");
        }
        Ok(Json(body).into_response())
    })
    .await
}

fn info(name: &str, e: &Entry) -> ModelInfo {
    match e {
        Entry::Ready(m) => ModelInfo {
            name: name.to_string(),
            status: "ready".into(),
            kind: Some(m.model.kind()),
            n_max: Some(m.n_max),
            category: Some(m.category.clone()),
        },
        Entry::Loading => ModelInfo { name: name.to_string(), status: "loading".into(), kind: None, n_max: None, category: None },
    }
}

async fn models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    Json(state.registry.snapshot().iter().map(|(n, e)| info(n, e)).collect())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let snap = state.registry.snapshot();
    let ready = snap.values().filter(|e| matches!(e, Entry::Ready(_))).count();
    Json(serde_json::json!({
        "status": "ok",
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "models": snap.len(),
        "ready": ready,
        "deterministic": state.seed.is_some(),
        "precision": if std::mem::size_of::<Real>() == 4 { "f32" } else { "f64" },
    }))
}

async fn reload(State(state): State<Arc<AppState>>, Path(name): Path<String>) -> ApiResult<Json<ModelInfo>> {
    let path = state.paths.get(&name).cloned().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model {name:?}")))?;
    let st = Arc::clone(&state);
    let n = name.clone();
    blocking(move || st.registry.load(&n, &path).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")))).await?;
    let entry = state.registry.get(&name).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model {name:?}")))?;
    Ok(Json(info(&name, &entry)))
}

pub struct ServeConfig {
    pub addr: String,
    pub models: Vec<(String, PathBuf)>,
    pub seed: Option<u64>,
    pub static_dir: Option<PathBuf>,
}

/// Loads every model, then builds the application state.
pub fn load_state(models: &[(String, PathBuf)], seed: Option<u64>) -> anyhow::Result<Arc<AppState>> {
    let registry = Registry::new();
    let mut paths = BTreeMap::new();
    for (name, path) in models {
        registry.load(name, path)?;
        paths.insert(name.clone(), path.clone());
    }
    Ok(Arc::new(AppState { registry, paths, seed }))
}

pub async fn serve(cfg: ServeConfig) -> anyhow::Result<()> {
    let state = load_state(&cfg.models, cfg.seed)?;
    let addr: SocketAddr = cfg.addr.parse().with_context(|| format!("bad address {:?}", cfg.addr))?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("cannot bind {addr}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    eprintln!("serving {} model(s) on http://{}", cfg.models.len(), listener.local_addr()?);
    axum::serve(listener, router(state, cfg.static_dir)).await?;
    Ok(())
}
