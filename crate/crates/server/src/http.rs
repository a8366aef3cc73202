//! HTTP surface: the scoring endpoint plus admin and health routes.
//!
//! - `POST /v1/score` — score one event, returning only the live response.
//! - `POST /admin/config` — replace the routing config (YAML body).
//! - `POST /admin/quantile-table/{ref}` — replace one table (JSON body).
//! - `GET /admin/version`, `GET /admin/stats`, `GET /health/ready`.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use muse_core::routing::RoutingError;
use muse_core::types::{RawEvent, ScoreResponse};
use serde::Serialize;
use serde_json::json;

use crate::service::{AdminError, ServeError, Service};

/// Wire form of the live scoring response.
#[derive(Debug, Serialize)]
pub struct WireScore {
    pub event_id: String,
    pub predictor: String,
    pub score: f64,
    pub latency_micros: u64,
}

impl From<ScoreResponse> for WireScore {
    fn from(response: ScoreResponse) -> Self {
        WireScore {
            event_id: response.event_id,
            predictor: response.predictor_id,
            score: response.score.value(),
            latency_micros: response.latency_micros,
        }
    }
}

fn error_body(kind: &str, message: String) -> serde_json::Value {
    json!({ "error": { "kind": kind, "message": message } })
}

fn serve_error_response(err: ServeError) -> Response {
    let (status, kind) = match &err {
        ServeError::NotReady => (StatusCode::SERVICE_UNAVAILABLE, "not_ready"),
        ServeError::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
        ServeError::Routing(RoutingError::NoMatchingRule) => {
            (StatusCode::NOT_FOUND, "no_matching_rule")
        }
        ServeError::Routing(_) => (StatusCode::INTERNAL_SERVER_ERROR, "routing"),
        ServeError::Predict(_) => (StatusCode::INTERNAL_SERVER_ERROR, "backend_unavailable"),
    };
    (status, Json(error_body(kind, err.to_string()))).into_response()
}

async fn score(State(service): State<Arc<Service>>, Json(raw): Json<RawEvent>) -> Response {
    // The scoring pipeline is synchronous CPU work, and mock backends may
    // sleep for latency experiments; keep it off the async workers.
    let result = tokio::task::spawn_blocking(move || service.score(raw)).await;
    match result {
        Ok(Ok(response)) => (StatusCode::OK, Json(WireScore::from(response))).into_response(),
        Ok(Err(err)) => serve_error_response(err),
        Err(join_err) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(error_body("internal", join_err.to_string())),
        )
            .into_response(),
    }
}

async fn reload_config(State(service): State<Arc<Service>>, body: String) -> Response {
    match service.swap_routing(&body) {
        Ok(report) => (StatusCode::OK, Json(report)).into_response(),
        Err(AdminError::Invalid(message)) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(error_body("invalid_config", message)),
        )
            .into_response(),
    }
}

async fn reload_table(
    State(service): State<Arc<Service>>,
    Path(table_ref): Path<String>,
    body: String,
) -> Response {
    match service.swap_table(&table_ref, &body) {
        Ok(report) => (StatusCode::OK, Json(report)).into_response(),
        Err(AdminError::Invalid(message)) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(error_body("invalid_table", message)),
        )
            .into_response(),
    }
}

async fn version(State(service): State<Arc<Service>>) -> Response {
    Json(service.versions()).into_response()
}

async fn stats(State(service): State<Arc<Service>>) -> Response {
    Json(service.stats()).into_response()
}

async fn ready(State(service): State<Arc<Service>>) -> Response {
    if service.is_ready() {
        (StatusCode::OK, Json(json!({ "ready": true }))).into_response()
    } else {
        (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "ready": false })),
        )
            .into_response()
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/score", post(score))
        .route("/admin/config", post(reload_config))
        .route("/admin/quantile-table/:table_ref", post(reload_table))
        .route("/admin/version", get(version))
        .route("/admin/stats", get(stats))
        .route("/health/ready", get(ready))
        .with_state(service)
}

/// Bind and serve until the process exits.
pub async fn serve(service: Arc<Service>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}
