//! HTTP JSON API exposing encode, decode, sample, interpolate and mix over a
//! checkpoint that is loaded once and never mutated.

use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use skexcraft_core::geom::{export_obj, export_svg, extrude_step, TriMesh};
use skexcraft_core::seq::{validate, CadModel, Diagnostic};
use skexcraft_model::skexgen::CLASS_LAYOUT;
use skexcraft_model::{CodeTuple, Condition, Decoded, Given, ModelError, Sampling, SkexGen};
use tower_http::cors::CorsLayer;

pub const MAX_SAMPLES: usize = 256;
pub const MAX_STEPS: usize = 64;

/// One model as the API returns it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultView {
    pub valid: bool,
    pub codes: CodeTuple,
    pub model: Option<CadModel>,
    /// One drawing per sketch.
    pub svg: Vec<String>,
    pub obj: Option<String>,
    pub geometry: Vec<u16>,
    pub extrude: Vec<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Per-step extrusion meshes of a model, concatenated.
pub fn model_mesh(model: &CadModel, chord_tol: f64) -> Option<TriMesh> {
    let mut mesh = TriMesh::default();
    for step in &model.steps {
        mesh.append(&extrude_step(&step.sketch, &step.extrude, chord_tol).ok()?);
    }
    Some(mesh)
}

pub fn view_model(model: &CadModel, codes: CodeTuple, chord_tol: f64) -> ResultView {
    let v = skexcraft_core::seq::views(model).ok();
    let diagnostics = validate(model);
    view(model.clone(), codes, v.as_ref().map(|v| v.geometry.classes.clone()), v.map(|v| v.extrude.classes), diagnostics, chord_tol)
}

pub fn view_decoded(d: &Decoded, chord_tol: f64) -> ResultView {
    match &d.model {
        Some(m) => view(m.clone(), d.codes.clone(), Some(d.geometry.clone()), Some(d.extrude.clone()), d.diagnostics.clone(), chord_tol),
        None => ResultView {
            valid: false,
            codes: d.codes.clone(),
            model: None,
            svg: Vec::new(),
            obj: None,
            geometry: d.geometry.clone(),
            extrude: d.extrude.clone(),
            error: d.error.clone(),
            diagnostics: d.diagnostics.clone(),
        },
    }
}

fn view(
    model: CadModel,
    codes: CodeTuple,
    geometry: Option<Vec<u16>>,
    extrude: Option<Vec<u16>>,
    diagnostics: Vec<Diagnostic>,
    chord_tol: f64,
) -> ResultView {
    let valid = diagnostics.is_empty();
    let obj = valid.then(|| model_mesh(&model, chord_tol)).flatten().map(|m| export_obj(&m));
    ResultView {
        valid,
        codes,
        svg: model.steps.iter().map(|s| export_svg(&s.sketch)).collect(),
        obj,
        model: Some(model),
        geometry: geometry.unwrap_or_default(),
        extrude: extrude.unwrap_or_default(),
        error: None,
        diagnostics,
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Conflict(String),
    NotLoaded,
    Internal(String),
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::CountMismatch(_) | ModelError::SequenceTooLong { .. } | ModelError::Seq(_) => ApiError::Conflict(e.to_string()),
            ModelError::GenerationExhausted { .. } => ApiError::Conflict(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, msg) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::NotLoaded => (StatusCode::SERVICE_UNAVAILABLE, "checkpoint not loaded".into()),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": msg }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Shared server state: the checkpoint slot is filled once.
#[derive(Clone)]
pub struct AppState {
    model: Arc<OnceLock<Arc<SkexGen>>>,
    chord_tol: f64,
}

impl AppState {
    pub fn empty(chord_tol: f64) -> Self {
        Self { model: Arc::new(OnceLock::new()), chord_tol }
    }

    pub fn loaded(model: SkexGen, chord_tol: f64) -> Self {
        let s = Self::empty(chord_tol);
        s.install(model);
        s
    }

    /// Returns false when a checkpoint was already installed.
    pub fn install(&self, model: SkexGen) -> bool {
        self.model.set(Arc::new(model)).is_ok()
    }

    pub fn is_loaded(&self) -> bool {
        self.model.get().is_some()
    }

    fn get(&self) -> Result<Arc<SkexGen>, ApiError> {
        self.model.get().cloned().ok_or(ApiError::NotLoaded)
    }
}

fn body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::BadRequest(e.to_string()))
}

/// Runs model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?.map(Json)
}

fn nucleus(p: f64) -> Result<Sampling, ApiError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(ApiError::BadRequest(format!("nucleus_p {p} outside (0, 1]")));
    }
    Ok(Sampling::Nucleus { p, temperature: 1.0 })
}

fn default_n() -> usize {
    1
}

fn default_p() -> f64 {
    0.9
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleReq {
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default = "default_p")]
    nucleus_p: f64,
    seed: u64,
    #[serde(default)]
    condition: Option<Condition>,
}

#[derive(Debug, Serialize)]
struct SampleResp {
    results: Vec<ResultView>,
    validity_rate: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodeReq {
    model: CadModel,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecodeReq {
    codes: CodeTuple,
    /// Greedy when absent.
    #[serde(default)]
    nucleus_p: Option<f64>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpolateReq {
    #[serde(rename = "modelA")]
    model_a: CadModel,
    #[serde(rename = "modelB")]
    model_b: CadModel,
    steps: usize,
}

#[derive(Debug, Serialize)]
struct ListResp {
    results: Vec<ResultView>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixReq {
    #[serde(rename = "modelA")]
    model_a: CadModel,
    #[serde(rename = "modelB")]
    model_b: CadModel,
    /// Groups taken from A, e.g. `t`, `ge` or `all`.
    take: String,
}

async fn health(State(s): State<AppState>) -> Response {
    if s.is_loaded() {
        Json(json!({ "status": "ok", "class_layout": CLASS_LAYOUT })).into_response()
    } else {
        (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response()
    }
}

async fn sample(State(s): State<AppState>, b: Bytes) -> ApiResult<SampleResp> {
    let m = s.get()?;
    let req: SampleReq = body(&b)?;
    if req.n == 0 || req.n > MAX_SAMPLES {
        return Err(ApiError::BadRequest(format!("n must be in 1..={MAX_SAMPLES}")));
    }
    let sampling = nucleus(req.nucleus_p)?;
    blocking(move || {
        let cond = req.condition.unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let results = (0..req.n)
            .map(|_| m.sample(&cond, sampling, &mut rng).map(|d| view_decoded(&d, s.chord_tol)))
            .collect::<Result<Vec<_>, _>>()?;
        let validity_rate = results.iter().filter(|r| r.valid).count() as f64 / req.n as f64;
        Ok(SampleResp { results, validity_rate })
    })
    .await
}

async fn encode(State(s): State<AppState>, b: Bytes) -> ApiResult<ResultView> {
    let m = s.get()?;
    let req: EncodeReq = body(&b)?;
    blocking(move || {
        let model = skexcraft_core::seq::canonicalize(&req.model);
        let (_, codes) = m.encode(&model)?;
        Ok(view_model(&model, codes, s.chord_tol))
    })
    .await
}

async fn decode(State(s): State<AppState>, b: Bytes) -> ApiResult<ResultView> {
    let m = s.get()?;
    let req: DecodeReq = body(&b)?;
    let sampling = req.nucleus_p.map(nucleus).transpose()?.unwrap_or(Sampling::Greedy);
    blocking(move || {
        let d = m.decode(&req.codes, sampling, &mut ChaCha8Rng::seed_from_u64(req.seed))?;
        Ok(view_decoded(&d, s.chord_tol))
    })
    .await
}

async fn interpolate(State(s): State<AppState>, b: Bytes) -> ApiResult<ListResp> {
    let m = s.get()?;
    let req: InterpolateReq = body(&b)?;
    if req.steps == 0 || req.steps > MAX_STEPS {
        return Err(ApiError::BadRequest(format!("steps must be in 1..={MAX_STEPS}")));
    }
    blocking(move || {
        let path = m.interpolate(&req.model_a, &req.model_b, req.steps)?;
        Ok(ListResp { results: path.iter().map(|d| view_decoded(d, s.chord_tol)).collect() })
    })
    .await
}

async fn mix(State(s): State<AppState>, b: Bytes) -> ApiResult<ResultView> {
    let m = s.get()?;
    let req: MixReq = body(&b)?;
    let take: Given = req.take.parse().map_err(|e: ModelError| ApiError::BadRequest(e.to_string()))?;
    blocking(move || Ok(view_decoded(&m.mix(&req.model_a, &req.model_b, take)?, s.chord_tol))).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sample", post(sample))
        .route("/encode", post(encode))
        .route("/decode", post(decode))
        .route("/interpolate", post(interpolate))
        .route("/mix", post(mix))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the process exits. The checkpoint may be installed into
/// `state` after the listener is up; until then model routes answer 503.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
