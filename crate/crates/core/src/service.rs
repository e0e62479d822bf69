//! HTTP inference service.
//!
//! `POST /generate` takes a [`GenerationRequest`](crate::generate::GenerationRequest)
//! and answers with a [`GenerationResponse`](crate::generate::GenerationResponse).
//! `GET /categories` lists the vocabulary and `GET /healthz` reports
//! readiness. Every route answers 503 until the checkpoint has loaded.

use std::future::IntoFuture;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::checkpoint::load_model;
use crate::error::{Error, Result};
use crate::generate::{parse_request, CoverPipeline};
use crate::title::TitleBackend;

/// Shared service state. The pipeline is set once and never mutated.
pub struct ServiceState {
    pipeline: OnceLock<Arc<CoverPipeline>>,
    /// Bounds concurrent renders; each one holds its activations in memory.
    renders: Semaphore,
}

impl ServiceState {
    pub fn loading() -> Arc<Self> {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        Arc::new(Self {
            pipeline: OnceLock::new(),
            renders: Semaphore::new(workers),
        })
    }

    pub fn ready(pipeline: CoverPipeline) -> Arc<Self> {
        let s = Self::loading();
        s.set_pipeline(pipeline);
        s
    }

    /// Installs the pipeline. Later calls are ignored.
    pub fn set_pipeline(&self, pipeline: CoverPipeline) {
        if self.pipeline.set(Arc::new(pipeline)).is_err() {
            log::warn!("service pipeline already set; keeping the first one");
        }
    }

    pub fn pipeline(&self) -> Option<Arc<CoverPipeline>> {
        self.pipeline.get().cloned()
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/generate", post(generate))
        .route("/categories", get(categories))
        .route("/healthz", get(healthz))
        .with_state(state)
}

fn unavailable() -> Response {
    (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response()
}

/// Maps an error to a status code and a JSON body.
pub fn error_response(err: &Error) -> Response {
    let body = match err {
        Error::InvalidGraph(report) => json!({
            "error": "invalid graph",
            "violations": report.violations,
        }),
        Error::Document { path, message } => json!({
            "error": "invalid document",
            "violations": [{ "path": path, "message": message }],
        }),
        other => json!({ "error": other.to_string() }),
    };
    let status = match err.exit_code() {
        2 => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    (status, Json(body)).into_response()
}

async fn generate(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let Some(pipeline) = state.pipeline() else {
        return unavailable();
    };
    let req = match parse_request(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&e),
    };
    if let Err(e) = pipeline.validate(&req.graph) {
        return error_response(&e);
    }
    let Ok(_permit) = state.renders.acquire().await else {
        return unavailable();
    };
    match tokio::task::spawn_blocking(move || pipeline.handle(&req)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error_response(&e),
        Err(e) => {
            log::error!("generation task failed: {e}");
            (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": "generation task failed" }))).into_response()
        }
    }
}

async fn categories(State(state): State<Arc<ServiceState>>) -> Response {
    match state.pipeline() {
        Some(p) => Json(json!({ "categories": p.model.vocab.entries() })).into_response(),
        None => unavailable(),
    }
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Response {
    match state.pipeline() {
        Some(_) => Json(json!({ "status": "ok" })).into_response(),
        None => unavailable(),
    }
}

/// Binds `addr`, loads the checkpoint in the background and serves until
/// the process ends. Loading failures are fatal.
pub async fn serve(addr: SocketAddr, checkpoint: PathBuf, backend: TitleBackend) -> Result<()> {
    let state = ServiceState::loading();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let loader = {
        let state = state.clone();
        tokio::task::spawn_blocking(move || -> Result<()> {
            let (model, manifest) = load_model(&checkpoint)?;
            log::info!("loaded checkpoint at iteration {} from {}", manifest.iteration, checkpoint.display());
            state.set_pipeline(CoverPipeline::new(model, backend));
            Ok(())
        })
    };
    let server = tokio::spawn(axum::serve(listener, router(state)).into_future());
    let loaded = match loader.await {
        Ok(r) => r,
        Err(e) => Err(Error::Checkpoint(format!("loader task failed: {e}"))),
    };
    if let Err(e) = loaded {
        server.abort();
        return Err(e);
    }
    match server.await {
        Ok(r) => r.map_err(Error::Io),
        Err(e) => Err(Error::Io(std::io::Error::other(e))),
    }
}
