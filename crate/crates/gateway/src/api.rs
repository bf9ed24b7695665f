//! `/api/v1` routes.
//!
//! | method | path                              | body / result                         |
//! |--------|-----------------------------------|---------------------------------------|
//! | GET    | /scenarios                        | scenario list                         |
//! | POST   | /scenarios                        | TOML document, returns its summary    |
//! | GET    | /scenarios/{name}                 | TOML document                         |
//! | GET    | /runs                             | run list                              |
//! | POST   | /runs                             | `{scenario, seed?, pace?}`            |
//! | GET    | /runs/{id}                        | run info                              |
//! | POST   | /runs/{id}/stop                   | final run summary                     |
//! | POST   | /runs/{id}/commands               | operator command, returns an ack      |
//! | GET    | /runs/{id}/fleet                  | latest fleet view                     |
//! | GET    | /runs/{id}/fleet/stream           | server-sent fleet views               |
//! | GET    | /runs/{id}/log                    | event log, once the run has ended     |
//! | GET    | /runs/{id}/files/{name}           | any persisted run file, once ended    |
//!
//! Errors are `{"error": "..."}` with 400, 404, 409 or 422.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;

use auvfleet_core::command::OperatorCommand;

use crate::runs::{RunError, RunHandle, EVENTS_FILE, FLEET_FILE, SCENARIO_FILE, SUMMARY_FILE};
use crate::{Gateway, GatewayError};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} {id:?} not found"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let status = match &e {
            GatewayError::InvalidScenario(_) => StatusCode::UNPROCESSABLE_ENTITY,
            GatewayError::UnknownScenario(_) | GatewayError::UnknownRun(_) => StatusCode::NOT_FOUND,
            GatewayError::RunActive(_) => StatusCode::CONFLICT,
            GatewayError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(gw: Arc<Gateway>) -> Router {
    let v1 = Router::new()
        .route("/scenarios", get(list_scenarios).post(upload_scenario))
        .route("/scenarios/{name}", get(get_scenario))
        .route("/runs", get(list_runs).post(start_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/stop", post(stop_run))
        .route("/runs/{id}/commands", post(submit_command))
        .route("/runs/{id}/fleet", get(fleet_snapshot))
        .route("/runs/{id}/fleet/stream", get(fleet_stream))
        .route("/runs/{id}/log", get(download_log))
        .route("/runs/{id}/files/{name}", get(download_file));
    Router::new().nest("/api/v1", v1).with_state(gw)
}

fn run(gw: &Gateway, id: &str) -> ApiResult<Arc<RunHandle>> {
    gw.run(id).ok_or_else(|| ApiError::not_found("run", id))
}

async fn list_scenarios(State(gw): State<Arc<Gateway>>) -> impl IntoResponse {
    Json(gw.scenarios())
}

async fn upload_scenario(State(gw): State<Arc<Gateway>>, body: String) -> ApiResult<Response> {
    let info = gw.add_scenario(&body)?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn get_scenario(State(gw): State<Arc<Gateway>>, Path(name): Path<String>) -> ApiResult<Response> {
    let text = gw.scenario_text(&name).ok_or_else(|| ApiError::not_found("scenario", &name))?;
    Ok(([(header::CONTENT_TYPE, "application/toml")], text).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartRequest {
    scenario: String,
    seed: Option<u64>,
    /// Sim seconds per wall second.
    pace: Option<f64>,
}

async fn start_run(State(gw): State<Arc<Gateway>>, Json(req): Json<StartRequest>) -> ApiResult<Response> {
    if let Some(p) = req.pace {
        if !(p.is_finite() && p > 0.0) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "pace must be positive"));
        }
    }
    let handle = gw.start_run(&req.scenario, req.seed, req.pace)?;
    Ok((StatusCode::CREATED, Json(handle.info())).into_response())
}

async fn list_runs(State(gw): State<Arc<Gateway>>) -> impl IntoResponse {
    Json(gw.runs().iter().map(|r| r.info()).collect::<Vec<_>>())
}

async fn get_run(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(&gw, &id)?.info()).into_response())
}

async fn stop_run(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = run(&gw, &id)?;
    let summary = handle.stop().await;
    Ok(Json(summary.as_ref()).into_response())
}

async fn submit_command(State(gw): State<Arc<Gateway>>, Path(id): Path<String>, body: String) -> ApiResult<Response> {
    let handle = run(&gw, &id)?;
    let cmd: OperatorCommand = serde_json::from_str(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed command: {e}")))?;
    match handle.submit(cmd).await {
        Ok(ack) => Ok((StatusCode::ACCEPTED, Json(ack)).into_response()),
        Err(RunError::Inactive) => Err(ApiError::new(StatusCode::CONFLICT, format!("run {id:?} is not active"))),
        Err(RunError::Rejected(e)) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())),
    }
}

fn json_body(text: Arc<str>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text.to_string()).into_response()
}

async fn fleet_snapshot(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(json_body(run(&gw, &id)?.feed.snapshot()))
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    /// Resume after this sequence number.
    since: Option<u64>,
}

/// Every view after `since` (or the `Last-Event-ID` header), then live
/// views as they are published, then a final `end` event.
async fn fleet_stream(
    State(gw): State<Arc<Gateway>>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let handle = run(&gw, &id)?;
    let last_id = headers.get("last-event-id").and_then(|v| v.to_str().ok()).and_then(|s| s.parse::<u64>().ok());
    let start = q.since.or(last_id).unwrap_or(0) as usize;
    let feed = handle.feed.clone();
    let s = stream::unfold((feed, start, false), |(feed, next, ended)| async move {
        if ended {
            return None;
        }
        loop {
            // Registered before the check so a push in between still wakes us.
            let notified = feed.notify.notified();
            let (line, closed) = feed.get(next);
            if let Some(line) = line {
                drop(notified);
                let ev = SseEvent::default().event("fleet").id((next + 1).to_string()).data(line.as_ref());
                return Some((Ok(ev), (feed, next + 1, false)));
            }
            if closed {
                drop(notified);
                let ev = SseEvent::default().event("end").data("{}");
                return Some((Ok(ev), (feed, next, true)));
            }
            notified.await;
        }
    });
    Ok(Sse::new(s).keep_alive(KeepAlive::new().interval(Duration::from_secs(10))))
}

async fn download_log(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> ApiResult<Response> {
    serve_file(&gw, &id, EVENTS_FILE).await
}

async fn download_file(State(gw): State<Arc<Gateway>>, Path((id, name)): Path<(String, String)>) -> ApiResult<Response> {
    serve_file(&gw, &id, &name).await
}

/// Persisted files carry ground truth, so they are only handed out once
/// the run is over.
async fn serve_file(gw: &Gateway, id: &str, name: &str) -> ApiResult<Response> {
    let handle = run(gw, id)?;
    let content_type = match name {
        EVENTS_FILE | FLEET_FILE => "application/x-ndjson",
        SUMMARY_FILE => "application/json",
        SCENARIO_FILE => "application/toml",
        _ => return Err(ApiError::not_found("file", name)),
    };
    if handle.is_active() {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("run {id:?} is still running")));
    }
    let bytes = tokio::fs::read(handle.dir.join(name))
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, format!("{name}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}
