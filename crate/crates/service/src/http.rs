use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use xmap_core::embedder::{EmbedderSpec, ErrorBody};
use xmap_core::Error;

use crate::engine::{Engine, SearchResponse};

pub const DEFAULT_MAX_N: usize = 100;
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub model_path: PathBuf,
    pub index_path: PathBuf,
    pub corpus_path: PathBuf,
    pub embedder: EmbedderSpec,
    pub max_n: usize,
    pub request_timeout: Duration,
}

impl ServiceConfig {
    pub fn validate(&self) -> xmap_core::Result<()> {
        if self.max_n == 0 {
            return Err(Error::InvalidConfig("max_n must be at least 1".into()));
        }
        if self.request_timeout.is_zero() {
            return Err(Error::InvalidConfig("request timeout must be positive".into()));
        }
        self.embedder.validate()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Startup(#[from] Error),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

/// Shared, read-only request state.
#[derive(Debug, Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub max_n: usize,
    pub request_timeout: Duration,
}

impl AppState {
    pub fn new(engine: Engine, max_n: usize, request_timeout: Duration) -> Self {
        Self {
            engine: Arc::new(engine),
            max_n,
            request_timeout,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthBody {
    pub status: String,
    pub corpus_size: usize,
    pub model_dims: [usize; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchRequest {
    query: Option<String>,
    vector: Option<Vec<f64>>,
    n: i64,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/search", post(search))
        .layer(middleware::from_fn_with_state(state.clone(), observe))
        .with_state(state)
}

/// Loads all artifacts, then serves until the process is stopped.
/// Any startup failure is returned before the socket is bound.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    config.validate()?;
    let engine = {
        let c = config.clone();
        tokio::task::spawn_blocking(move || Engine::load(&c.model_path, &c.index_path, &c.corpus_path, c.embedder))
            .await
            .expect("loader panicked")?
    };
    log::info!(
        "loaded {} indexed items, model dims {:?}",
        engine.corpus_size(),
        engine.model_dims()
    );
    let app = router(AppState::new(engine, config.max_n, config.request_timeout));
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: config.bind,
            source,
        })?;
    log::info!("listening on {}", config.bind);
    axum::serve(listener, app).await.map_err(ServiceError::Serve)
}

/// Applies the request timeout and writes one JSON log line per request.
async fn observe(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let path = req.uri().path().to_string();
    let start = Instant::now();
    let response = match tokio::time::timeout(state.request_timeout, next.run(req)).await {
        Ok(r) => r,
        Err(_) => ApiError(StatusCode::SERVICE_UNAVAILABLE, "request timed out".into()).into_response(),
    };
    log::info!(
        target: "xmap::request",
        "{}",
        json!({
            "path": path,
            "latency_ms": start.elapsed().as_secs_f64() * 1000.0,
            "status": response.status().as_u16(),
        })
    );
    response
}

async fn health(State(state): State<AppState>) -> Json<HealthBody> {
    Json(HealthBody {
        status: "ok".into(),
        corpus_size: state.engine.corpus_size(),
        model_dims: state.engine.model_dims(),
    })
}

async fn search(State(state): State<AppState>, body: Bytes) -> Result<Json<SearchResponse>, ApiError> {
    let req: SearchRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed request body: {e}")))?;
    if req.n < 1 || req.n as u64 > state.max_n as u64 {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("n must be between 1 and {}, got {}", state.max_n, req.n),
        ));
    }
    let n = req.n as usize;
    let query = match (req.query, req.vector) {
        (Some(text), None) => Query::Text(text),
        (None, Some(v)) => Query::Vector(to_f32(&v)?),
        _ => {
            return Err(ApiError(
                StatusCode::BAD_REQUEST,
                "exactly one of \"query\" or \"vector\" is required".into(),
            ))
        }
    };

    let engine = state.engine.clone();
    // Forward pass and scan are CPU-bound and the external embedder client
    // blocks, so the whole request runs off the async workers.
    tokio::task::spawn_blocking(move || {
        let vector = match query {
            Query::Vector(v) => v,
            Query::Text(text) => engine
                .embed_query(&text)
                .map_err(|e| ApiError(StatusCode::SERVICE_UNAVAILABLE, format!("embedder unavailable: {e}")))?,
        };
        engine
            .search_vector(&vector, n)
            .map(|hits| Json(SearchResponse { hits }))
            .map_err(|e| match e {
                Error::DimMismatch { .. } => ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
                other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
            })
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

enum Query {
    Text(String),
    Vector(Vec<f32>),
}

fn to_f32(v: &[f64]) -> Result<Vec<f32>, ApiError> {
    v.iter()
        .map(|&x| {
            let y = x as f32;
            if y.is_finite() {
                Ok(y)
            } else {
                Err(ApiError(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    format!("vector component {x} is outside the f32 range"),
                ))
            }
        })
        .collect()
}
