//! HTTP front end for interactive lens sessions.
//!
//! A session holds one uploaded image and a small cache of factored
//! systems. Each `PUT /sessions/{id}/lens` reruns the pipeline on that image;
//! updates that leave the mesh, footprint and heights unchanged (an `alpha`
//! change, say) reuse the cached factorization.
//!
//! | method | path                              | body / result             |
//! |--------|-----------------------------------|---------------------------|
//! | POST   | `/sessions?rows=R&cols=C`         | PNG or PPM bytes → id     |
//! | PUT    | `/sessions/{id}/lens`             | [`LensRequest`] → report  |
//! | GET    | `/sessions/{id}/result.png`       | magnified image           |
//! | GET    | `/sessions/{id}/heatmap.png`      | distortion map            |
//! | GET    | `/sessions/{id}`                  | size and last lens        |
//! | DELETE | `/sessions/{id}`                  | frees the session         |
//! | GET    | `/healthz`                        | `ok`                      |

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use geolens_core::pipeline::{
    execute, FactorCache, LensConfig, PipelineConfig, ShapeConfig, StageTiming,
};
use geolens_core::raster::decode_ppm;
use geolens_core::{BoundaryMode, ImageBuffer, LensError, ProfileKind, ProfileMode};

pub const MAX_SIDE: u32 = 4096;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub idle_timeout: Duration,
    pub max_side: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            idle_timeout: Duration::from_secs(30 * 60),
            max_side: MAX_SIDE,
        }
    }
}

/// Results of the latest completed compute.
struct Latest {
    result_png: Vec<u8>,
    heatmap_png: Vec<u8>,
}

struct Compute {
    cache: FactorCache,
    latest: Option<Latest>,
    last_lens: Option<LensRequest>,
}

pub struct Session {
    texture: Arc<ImageBuffer>,
    rows: usize,
    cols: usize,
    /// Number of lens requests received; a request whose ticket is no longer
    /// the newest when it gets its turn is superseded.
    ticket: AtomicU64,
    compute: tokio::sync::Mutex<Compute>,
    last_used: Mutex<Instant>,
}

impl Session {
    fn touch(&self) {
        *self.last_used.lock().unwrap() = Instant::now();
    }
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<String, Arc<Session>>>>,
    next_id: Arc<AtomicU64>,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
            config,
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Drops sessions idle for longer than the configured timeout as of
    /// `now`; returns how many were removed.
    pub fn expire_idle(&self, now: Instant) -> usize {
        let timeout = self.config.idle_timeout;
        let mut sessions = self.sessions.lock().unwrap();
        let before = sessions.len();
        sessions.retain(|_, s| now.saturating_duration_since(*s.last_used.lock().unwrap()) <= timeout);
        before - sessions.len()
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let session = self
            .sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))?;
        session.touch();
        Ok(session)
    }

    fn new_id(&self) -> String {
        // Counter for uniqueness, clock bits so ids are not guessable in
        // sequence across restarts.
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.subsec_nanos())
            .unwrap_or(0);
        format!("s{n:x}-{nanos:08x}")
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: serde_json::json!({ "error": message.into() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Body of `PUT /sessions/{id}/lens`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensRequest {
    /// `{"kind": "circle", "center": [x, y], "radius": r}` or
    /// `{"kind": "polygon", "points": [[x, y], ...]}`.
    pub shape: ShapeConfig,
    #[serde(default)]
    pub profile: ProfileKind,
    #[serde(default)]
    pub mode: ProfileMode,
    pub h0: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub boundary_mode: BoundaryMode,
}

fn default_epsilon() -> f64 {
    1e-3
}

/// JSON answer to a successful lens update.
#[derive(Debug, Serialize, Deserialize)]
pub struct LensResponse {
    pub iterations: usize,
    pub converged: bool,
    pub initial_energy: f64,
    pub energy_trace: Vec<f64>,
    pub flipped_triangles: Vec<usize>,
    pub factor_cache_hit: bool,
    pub assembly_ms: f64,
    pub factorization_ms: f64,
    pub iteration_ms: Vec<f64>,
    pub stage_timings: Vec<TimingEntry>,
    pub center_magnification: Vec<f64>,
    pub distortion_total: f64,
    pub distortion_max: f64,
    pub result_url: String,
    pub heatmap_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TimingEntry {
    pub stage: String,
    pub ms: f64,
}

impl From<&StageTiming> for TimingEntry {
    fn from(t: &StageTiming) -> Self {
        TimingEntry {
            stage: t.stage.to_string(),
            ms: t.ms,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedSession {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Deserialize)]
struct MeshQuery {
    rows: Option<usize>,
    cols: Option<usize>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/lens", put(update_lens))
        .route("/sessions/{id}/result.png", get(result_png))
        .route("/sessions/{id}/heatmap.png", get(heatmap_png))
        .layer(DefaultBodyLimit::max(256 << 20))
        .with_state(state)
}

/// Width and height from a PNG header or a PPM preamble, read before any
/// pixel is decoded.
fn peek_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") && bytes.len() >= 24 {
        let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
        let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
        return Some((w, h));
    }
    if bytes.starts_with(b"P6") {
        let head = String::from_utf8_lossy(&bytes[..bytes.len().min(256)]).into_owned();
        let mut nums = head
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .skip(1)
            .map(str::parse::<u32>);
        return Some((nums.next()?.ok()?, nums.next()?.ok()?));
    }
    None
}

fn decode_upload(bytes: &[u8], max_side: u32) -> Result<ImageBuffer, ApiError> {
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, m);
    let (w, h) = peek_dimensions(bytes).ok_or_else(|| bad("body is not a PNG or binary PPM image".into()))?;
    if w == 0 || h == 0 || w > max_side || h > max_side {
        return Err(bad(format!("image is {w}x{h}; each side must be 1..={max_side}")));
    }
    let img = if bytes.starts_with(b"P6") {
        decode_ppm(bytes, Path::new("upload"))
    } else {
        ImageBuffer::from_png(bytes)
    };
    img.map_err(|e| bad(e.to_string()))
}

async fn create_session(
    State(state): State<AppState>,
    Query(q): Query<MeshQuery>,
    body: Bytes,
) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let rows = q.rows.unwrap_or(100);
    let cols = q.cols.unwrap_or(100);
    if !(2..=1000).contains(&rows) || !(2..=1000).contains(&cols) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "rows and cols must be in 2..=1000"));
    }
    let max_side = state.config.max_side;
    let texture = tokio::task::spawn_blocking(move || decode_upload(&body, max_side))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let id = state.new_id();
    let created = CreatedSession {
        id: id.clone(),
        width: texture.width(),
        height: texture.height(),
        rows,
        cols,
    };
    let session = Session {
        texture: Arc::new(texture),
        rows,
        cols,
        ticket: AtomicU64::new(0),
        compute: tokio::sync::Mutex::new(Compute {
            cache: FactorCache::default(),
            latest: None,
            last_lens: None,
        }),
        last_used: Mutex::new(Instant::now()),
    };
    state.sessions.lock().unwrap().insert(id.clone(), Arc::new(session));
    log::info!("session {id} created ({}x{})", created.width, created.height);
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub rows: usize,
    pub cols: usize,
    pub lens: Option<LensRequest>,
    pub cached_factorizations: usize,
}

async fn session_info(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionInfo>, ApiError> {
    let session = state.get(&id)?;
    let compute = session.compute.lock().await;
    Ok(Json(SessionInfo {
        width: session.texture.width(),
        height: session.texture.height(),
        rows: session.rows,
        cols: session.cols,
        lens: compute.last_lens.clone(),
        cached_factorizations: compute.cache.len(),
        id,
    }))
}

async fn delete_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<StatusCode, ApiError> {
    match state.sessions.lock().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}"))),
    }
}

fn build_config(session: &Session, lens: &LensRequest) -> PipelineConfig {
    let mut config = PipelineConfig::default_scenario(session.texture.width(), session.texture.height());
    config.mesh.rows = session.rows;
    config.mesh.cols = session.cols;
    config.solver.alpha = lens.alpha;
    config.solver.epsilon = lens.epsilon;
    config.solver.boundary = lens.boundary_mode;
    config.lenses = vec![LensConfig {
        shape: lens.shape.clone(),
        profile: lens.profile,
        h0: lens.h0,
        mode: lens.mode,
    }];
    config
}

async fn update_lens(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<LensResponse>, ApiError> {
    let session = state.get(&id)?;
    let lens: LensRequest = serde_json::from_slice(&body).map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, format!("invalid lens: {e}"))
    })?;
    if matches!(lens.shape, ShapeConfig::PolygonFile { .. }) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid lens: shape kind polygon_file is not accepted over HTTP; send points",
        ));
    }
    let config = build_config(&session, &lens);
    config.lens_specs().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid lens: {e}")))?;

    let ticket = session.ticket.fetch_add(1, Ordering::SeqCst) + 1;
    let mut compute = session.compute.lock().await;
    if session.ticket.load(Ordering::SeqCst) != ticket {
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            body: serde_json::json!({ "error": "superseded by a newer lens update", "superseded": true }),
        });
    }

    let texture = session.texture.clone();
    let mut cache = std::mem::take(&mut compute.cache);
    let (cache, outcome) = tokio::task::spawn_blocking(move || {
        let outcome = execute(&config, &texture, Some(&mut cache)).and_then(|out| {
            let encode = |img: &ImageBuffer| {
                img.to_png().map_err(|source| geolens_core::pipeline::StageError {
                    stage: geolens_core::pipeline::Stage::Write,
                    source,
                })
            };
            Ok((encode(&out.image)?, encode(&out.heatmap)?, out))
        });
        (cache, outcome)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    compute.cache = cache;

    let (result_png, heatmap_png, out) = outcome.map_err(|e| {
        let status = if matches!(e.source, LensError::Config(_) | LensError::InvalidArgument(_) | LensError::EmptyRoi | LensError::OverlappingLenses { .. }) {
            StatusCode::BAD_REQUEST
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        ApiError {
            status,
            body: serde_json::json!({ "error": e.to_string(), "stage": e.stage.name() }),
        }
    })?;
    let r = &out.flatten.report;
    let response = LensResponse {
        iterations: r.iterations,
        converged: r.converged,
        initial_energy: r.initial_energy,
        energy_trace: r.energy_trace.clone(),
        flipped_triangles: r.flipped_triangles.clone(),
        factor_cache_hit: out.factor_cache_hit,
        assembly_ms: r.timings.assembly_ms,
        factorization_ms: r.timings.factorization_ms,
        iteration_ms: r.timings.iteration_ms.clone(),
        stage_timings: out.timings.iter().map(TimingEntry::from).collect(),
        center_magnification: out.center_magnification.clone(),
        distortion_total: out.distortion.total,
        distortion_max: out.distortion.max,
        result_url: format!("/sessions/{id}/result.png"),
        heatmap_url: format!("/sessions/{id}/heatmap.png"),
    };
    if !r.converged {
        log::warn!("session {id}: flatten stopped after {} iterations", r.iterations);
    }
    compute.latest = Some(Latest {
        result_png,
        heatmap_png,
    });
    compute.last_lens = Some(lens);
    Ok(Json(response))
}

async fn raster(state: AppState, id: String, heatmap: bool) -> Result<Response, ApiError> {
    let session = state.get(&id)?;
    let compute = session.compute.lock().await;
    let latest = compute
        .latest
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no lens has been applied yet"))?;
    let bytes = if heatmap {
        latest.heatmap_png.clone()
    } else {
        latest.result_png.clone()
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn result_png(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    raster(state, id, false).await
}

async fn heatmap_png(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    raster(state, id, true).await
}

/// Periodically drops idle sessions until the runtime shuts down.
pub fn spawn_reaper(state: AppState, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let removed = state.expire_idle(Instant::now());
            if removed > 0 {
                log::info!("expired {removed} idle sessions");
            }
        }
    })
}
