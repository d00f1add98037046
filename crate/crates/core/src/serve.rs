//! Read-only JSON service over a loaded checkpoint.
//!
//! Endpoints:
//!
//! - `POST /score` `{head, relation, tail}` -> `{score}`
//! - `POST /topk` `{head, relation, k}` -> `{entities, scores}`
//! - `POST /neighbors` `{entity, k}` -> `{entities, similarities}` (cosine, self excluded)
//! - `GET /health` -> `{status, model, entities, relations, dim}`
//!
//! Rankings sort by score descending, then entity index ascending. Errors carry a
//! JSON body `{"error": ..}`: 400 for malformed requests or `k` out of range, 404
//! for unknown symbols.

use std::cmp::Ordering;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::SystemTime;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::continual::{Checkpoint, CheckpointError};
use crate::models::{score_kvsall, Matrix, ModelSpec, RowSource};

/// Immutable state shared by all request handlers.
#[derive(Debug)]
pub struct ServeState {
    checkpoint: Checkpoint,
    spec: ModelSpec,
    started: SystemTime,
}

impl ServeState {
    pub fn new(checkpoint: Checkpoint) -> Result<Self, CheckpointError> {
        checkpoint.validate()?;
        let spec = checkpoint.config.model;
        Ok(Self { checkpoint, spec, started: SystemTime::now() })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn started(&self) -> SystemTime {
        self.started
    }

    fn entity(&self, symbol: &str) -> Result<usize, ApiError> {
        self.checkpoint
            .vocab
            .entities
            .get(symbol.as_bytes())
            .ok_or_else(|| ApiError::UnknownEntity(symbol.to_owned()))
    }

    fn relation(&self, symbol: &str) -> Result<usize, ApiError> {
        self.checkpoint
            .vocab
            .relations
            .get(symbol.as_bytes())
            .ok_or_else(|| ApiError::UnknownRelation(symbol.to_owned()))
    }

    fn entity_symbol(&self, index: usize) -> String {
        let bytes = self.checkpoint.vocab.entities.symbol(index).unwrap_or_default();
        String::from_utf8_lossy(bytes).into_owned()
    }

    fn check_k(&self, k: i64) -> Result<usize, ApiError> {
        let n = self.checkpoint.vocab.entity_count();
        if k < 1 || k as u64 > n as u64 {
            return Err(ApiError::KOutOfRange { k, max: n });
        }
        Ok(k as usize)
    }

    pub fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ApiError> {
        let h = self.entity(&req.head)?;
        let r = self.relation(&req.relation)?;
        let t = self.entity(&req.tail)?;
        let score = self
            .spec
            .model()
            .score_triple(&self.checkpoint.store, h, r, t)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(ScoreResponse { score })
    }

    pub fn topk(&self, req: &TopkRequest) -> Result<TopkResponse, ApiError> {
        let h = self.entity(&req.head)?;
        let r = self.relation(&req.relation)?;
        let k = self.check_k(req.k)?;
        let scores = score_kvsall(&self.spec, &self.checkpoint.store, h, r).map_err(|e| ApiError::Internal(e.to_string()))?;
        let order = rank_descending(&scores, k);
        Ok(TopkResponse {
            entities: order.iter().map(|&i| self.entity_symbol(i)).collect(),
            scores: order.iter().map(|&i| scores[i]).collect(),
        })
    }

    pub fn neighbors(&self, req: &NeighborsRequest) -> Result<NeighborsResponse, ApiError> {
        let e = self.entity(&req.entity)?;
        let n = self.checkpoint.vocab.entity_count();
        if req.k < 1 || req.k as u64 >= n as u64 {
            return Err(ApiError::KOutOfRange { k: req.k, max: n.saturating_sub(1) });
        }
        let store = &self.checkpoint.store;
        let target = store.row(Matrix::Entity, e);
        let mut sims: Vec<f64> = (0..n).map(|j| cosine(target, store.entity(j))).collect();
        sims[e] = f64::NEG_INFINITY;
        let order = rank_descending(&sims, req.k as usize);
        Ok(NeighborsResponse {
            entities: order.iter().map(|&i| self.entity_symbol(i)).collect(),
            similarities: order.iter().map(|&i| sims[i]).collect(),
        })
    }

    pub fn health(&self) -> HealthResponse {
        HealthResponse {
            status: "ok",
            model: self.spec.kind.name(),
            entities: self.checkpoint.vocab.entity_count(),
            relations: self.checkpoint.vocab.relation_count(),
            dim: self.spec.dim,
        }
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Indices of the `k` largest scores, descending, ties by ascending index.
pub fn rank_descending(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order.truncate(k);
    order
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopkRequest {
    pub head: String,
    pub relation: String,
    pub k: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkResponse {
    pub entities: Vec<String>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeighborsRequest {
    pub entity: String,
    pub k: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborsResponse {
    pub entities: Vec<String>,
    pub similarities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthResponse {
    pub status: &'static str,
    pub model: &'static str,
    pub entities: usize,
    pub relations: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApiError {
    BadRequest(String),
    UnknownEntity(String),
    UnknownRelation(String),
    KOutOfRange { k: i64, max: usize },
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) | ApiError::KOutOfRange { .. } => StatusCode::BAD_REQUEST,
            ApiError::UnknownEntity(_) | ApiError::UnknownRelation(_) => StatusCode::NOT_FOUND,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> Value {
        match self {
            ApiError::BadRequest(m) => json!({"error": "bad_request", "message": m}),
            ApiError::UnknownEntity(s) => json!({"error": "unknown_entity", "symbol": s}),
            ApiError::UnknownRelation(s) => json!({"error": "unknown_relation", "symbol": s}),
            ApiError::KOutOfRange { k, max } => json!({"error": "k_out_of_range", "k": k, "max": max}),
            ApiError::Internal(m) => json!({"error": "internal", "message": m}),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

async fn score_handler(State(s): State<Arc<ServeState>>, body: Bytes) -> Result<Json<ScoreResponse>, ApiError> {
    s.score(&parse(&body)?).map(Json)
}

async fn topk_handler(State(s): State<Arc<ServeState>>, body: Bytes) -> Result<Json<TopkResponse>, ApiError> {
    s.topk(&parse(&body)?).map(Json)
}

async fn neighbors_handler(State(s): State<Arc<ServeState>>, body: Bytes) -> Result<Json<NeighborsResponse>, ApiError> {
    s.neighbors(&parse(&body)?).map(Json)
}

async fn health_handler(State(s): State<Arc<ServeState>>) -> Json<HealthResponse> {
    Json(s.health())
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/score", post(score_handler))
        .route("/topk", post(topk_handler))
        .route("/neighbors", post(neighbors_handler))
        .route("/health", get(health_handler))
        .with_state(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid bind address {0}")]
    Address(String),
}

/// Serves on an already bound listener until the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServeState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Loads and validates the checkpoint, then binds. Nothing listens until the
/// checkpoint is fully loaded. `on_ready` receives the bound address.
pub fn run(bind: &str, port: u16, checkpoint: &Path, on_ready: impl FnOnce(SocketAddr)) -> Result<(), ServeError> {
    let state = Arc::new(ServeState::new(Checkpoint::load_from_path(checkpoint)?)?);
    let addr: SocketAddr = format!("{bind}:{port}")
        .parse()
        .or_else(|_| format!("[{bind}]:{port}").parse())
        .map_err(|_| ServeError::Address(bind.to_owned()))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_ready(listener.local_addr()?);
        serve(listener, state).await
    })?;
    Ok(())
}
