//! HTTP front end for [`agent_discovery::registry::Registry`].
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/agents` | profile document | `{agent_id, code, seq}` |
//! | PUT | `/agents/{id}` | profile document | `{seq}` |
//! | DELETE | `/agents/{id}` | | `{seq}` |
//! | POST | `/agents/{id}/endorsements` | `{score}` | `{credibility}` |
//! | POST | `/query` | query spec | ranked results |
//! | GET | `/events?since=n` | | events with `seq > n` |
//! | GET | `/healthz` | | `{status, agents, last_seq}` |
//!
//! Errors come back as `{"error": kind, "message": text}`.

pub mod config;

use std::sync::Arc;

use agent_discovery::index::QuerySpec;
use agent_discovery::registry::{Registry, RegistryError};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

pub struct ApiError(RegistryError);

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        ApiError(e)
    }
}

fn classify(e: &RegistryError) -> (StatusCode, &'static str) {
    use RegistryError::*;
    match e {
        Profile(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_profile"),
        OutOfRangeValue { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "out_of_range"),
        DuplicateId(_) => (StatusCode::CONFLICT, "duplicate_id"),
        UnknownId(_) => (StatusCode::NOT_FOUND, "unknown_id"),
        EmbedderUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "embedder_unavailable"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = classify(&self.0);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({"error": kind, "message": self.0.to_string()}))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// Registry calls may embed remotely or write the log, so they run off the
/// async workers.
async fn blocking<T, F>(registry: Arc<Registry>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Registry) -> Result<T, RegistryError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&registry))
        .await
        .expect("registry task panicked")
        .map_err(ApiError)
}

async fn register(State(reg): State<Arc<Registry>>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let r = blocking(reg, move |r| r.register_agent(&body)).await?;
    Ok((StatusCode::CREATED, Json(json!(r))))
}

async fn update(State(reg): State<Arc<Registry>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let seq = blocking(reg, move |r| r.update_agent(&id, &body)).await?;
    Ok(Json(json!({ "seq": seq })))
}

async fn deregister(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult {
    let seq = blocking(reg, move |r| r.deregister_agent(&id)).await?;
    Ok(Json(json!({ "seq": seq })))
}

#[derive(Deserialize)]
struct Endorsement {
    score: f64,
}

async fn endorse(
    State(reg): State<Arc<Registry>>,
    Path(id): Path<String>,
    Json(e): Json<Endorsement>,
) -> ApiResult {
    let credibility = blocking(reg, move |r| r.record_endorsement(&id, e.score)).await?;
    Ok(Json(json!({ "credibility": credibility })))
}

async fn query(State(reg): State<Arc<Registry>>, Json(spec): Json<QuerySpec>) -> ApiResult {
    let results = blocking(reg, move |r| r.query(&spec)).await?;
    Ok(Json(json!(results)))
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

async fn events(State(reg): State<Arc<Registry>>, Query(q): Query<Since>) -> Json<Value> {
    Json(json!(reg.event_feed(q.since)))
}

async fn healthz(State(reg): State<Arc<Registry>>) -> Json<Value> {
    let state = reg.state();
    Json(json!({"status": "ok", "agents": state.len(), "last_seq": state.last_seq()}))
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/agents", post(register))
        .route("/agents/{id}", put(update).delete(deregister))
        .route("/agents/{id}/endorsements", post(endorse))
        .route("/query", post(query))
        .route("/events", get(events))
        .route("/healthz", get(healthz))
        .with_state(registry)
}

/// Serves until ctrl-c, then writes a final snapshot.
pub async fn serve(registry: Arc<Registry>, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::clone(&registry)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    let snap = tokio::task::spawn_blocking(move || registry.snapshot())
        .await
        .expect("snapshot task panicked");
    match snap {
        Ok(p) => log::info!("final snapshot at {}", p.display()),
        Err(e) => log::error!("final snapshot failed: {e}"),
    }
    Ok(())
}
