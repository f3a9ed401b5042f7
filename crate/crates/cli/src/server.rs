//! HTTP/JSON front end over an immutable [`QueryService`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::service::{ApiQueryRequest, QueryError, QueryService};

pub fn router(service: Arc<QueryService>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/vocab", get(vocab))
        .route("/api/query", post(query))
        .route("/api/record/{id}", get(record))
        .with_state(service)
}

fn error_response(err: QueryError) -> Response {
    let (status, body) = match &err {
        QueryError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({ "error": m })),
        QueryError::UnknownLabel { field, token } => {
            (StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": err.to_string(), "field": field, "token": token }))
        }
        QueryError::NotFound(_) => (StatusCode::NOT_FOUND, json!({ "error": err.to_string() })),
    };
    (status, Json(body)).into_response()
}

async fn health(State(s): State<Arc<QueryService>>) -> Response {
    Json(json!({ "status": "ok", "records": s.db().len() })).into_response()
}

async fn vocab(State(s): State<Arc<QueryService>>) -> Response {
    Json(s.vocab_response()).into_response()
}

// The body is parsed by hand so every malformed request maps to 400.
async fn query(State(s): State<Arc<QueryService>>, body: Bytes) -> Response {
    let req: ApiQueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(QueryError::BadRequest(format!("malformed request: {e}"))),
    };
    match s.query(&req) {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => error_response(e),
    }
}

async fn record(State(s): State<Arc<QueryService>>, Path(id): Path<String>) -> Response {
    let Ok(id) = id.parse::<u64>() else {
        return error_response(QueryError::BadRequest(format!("bad record id `{id}`")));
    };
    match s.record(id) {
        Ok(r) => Json(r).into_response(),
        Err(e) => error_response(e),
    }
}

/// Serves until the process is stopped.
pub async fn serve(service: Arc<QueryService>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await?;
    Ok(())
}
