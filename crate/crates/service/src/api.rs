use std::convert::Infallible;
use std::sync::mpsc::RecvTimeoutError;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use flowcq::cql::row_to_json;
use flowcq::event::{decode_payload, encode_event_string, event_from_json, payload_to_json, CaseId, ModelId, Payload, Timestamp};
use flowcq::log::{export_csv, export_ndjson};
use flowcq::runtime::{ErrorClass, MigrationPolicy, ModelSpec, Outcome, Runtime, RuntimeError};
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

type Shared = Arc<Runtime>;

/// An error response: `{"error": message, "status": code}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn malformed(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into() }
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        let status = match e.class() {
            ErrorClass::Malformed => StatusCode::BAD_REQUEST,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::Fault => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message, "status": self.status.as_u16()}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T: DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::malformed(format!("invalid request body: {e}")))
}

pub fn router(rt: Shared) -> Router {
    Router::new()
        .route("/models", post(deploy).get(models))
        .route("/models/{id}/migrate", post(migrate))
        .route("/cases", post(start).get(cases))
        .route("/cases/{id}", get(case))
        .route("/cases/{id}/enabled", get(enabled))
        .route("/cases/{id}/state", get(state))
        .route("/cases/{id}/variables", get(variables))
        .route("/events", post(submit))
        .route("/log", get(log))
        .route("/subscribe", get(subscribe))
        .with_state(rt)
}

async fn deploy(State(rt): State<Shared>, bytes: Bytes) -> ApiResult<Response> {
    let spec: ModelSpec = body(&bytes)?;
    let d = rt.deploy(&spec)?;
    Ok((StatusCode::CREATED, Json(d)).into_response())
}

async fn models(State(rt): State<Shared>) -> Json<Value> {
    Json(json!(rt.models()))
}

#[derive(Deserialize)]
struct MigrateRequest {
    #[serde(flatten)]
    spec: ModelSpec,
    #[serde(default)]
    policy: Option<MigrationPolicy>,
}

async fn migrate(State(rt): State<Shared>, Path(id): Path<u64>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let req: MigrateRequest = body(&bytes)?;
    let target = req.spec.load()?.model_id();
    if target != ModelId(id) {
        return Err(ApiError::malformed(format!("source declares model {target}, not {id}")));
    }
    Ok(Json(json!(rt.migrate(&req.spec, req.policy)?)))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct StartRequest {
    model_id: u64,
    #[serde(default)]
    payload: serde_json::Map<String, Value>,
    #[serde(default)]
    ts: Option<u64>,
}

fn outcome_json(o: &Outcome) -> Value {
    let events: Vec<Value> = o
        .events
        .iter()
        .map(|e| serde_json::from_str(&encode_event_string(e)).expect("wire encoding is JSON"))
        .collect();
    json!({
        "caseId": o.case.0,
        "status": o.status,
        "events": events,
        "diagnostics": o.diagnostics,
        "purged": o.purged,
    })
}

async fn start(State(rt): State<Shared>, bytes: Bytes) -> ApiResult<Response> {
    let req: StartRequest = body(&bytes)?;
    let payload: Payload = decode_payload(&req.payload).map_err(|e| ApiError::malformed(e.to_string()))?;
    let out = rt.start_case(ModelId(req.model_id), payload, req.ts.map(Timestamp))?;
    Ok((StatusCode::CREATED, Json(outcome_json(&out))).into_response())
}

async fn submit(State(rt): State<Shared>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let value: Value = body(&bytes)?;
    let e = event_from_json(&value).map_err(|e| ApiError::malformed(e.to_string()))?;
    Ok(Json(outcome_json(&rt.submit(e)?)))
}

async fn cases(State(rt): State<Shared>) -> Json<Value> {
    Json(json!(rt.cases()))
}

async fn case(State(rt): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let rec = rt.case(CaseId(id)).ok_or(RuntimeError::UnknownCase(CaseId(id)))?;
    Ok(Json(json!(rec)))
}

async fn enabled(State(rt): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(rt.enabled_work(CaseId(id))?)))
}

async fn state(State(rt): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let rows: Vec<Value> = rt.state(CaseId(id))?.iter().map(row_to_json).collect();
    Ok(Json(Value::Array(rows)))
}

async fn variables(State(rt): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    Ok(Json(rt.variables(CaseId(id))?.map_or(Value::Null, |p| payload_to_json(&p))))
}

#[derive(Deserialize)]
struct LogQuery {
    case: Option<u64>,
    model: Option<u64>,
    format: Option<String>,
}

async fn log(State(rt): State<Shared>, Query(q): Query<LogQuery>) -> ApiResult<Response> {
    let events = rt.log();
    let (model, case) = (q.model.map(ModelId), q.case.map(CaseId));
    let (mime, text) = match q.format.as_deref().unwrap_or("ndjson") {
        "ndjson" => ("application/x-ndjson", export_ndjson(&events, model, case)),
        "csv" => ("text/csv", export_csv(&events, model, case)),
        other => return Err(ApiError::malformed(format!("unknown log format {other:?}"))),
    };
    Ok(([(header::CONTENT_TYPE, mime)], text).into_response())
}

/// Server-sent events: one message per pushed record, named after its stream.
async fn subscribe(State(rt): State<Shared>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let feed = rt.subscribe();
    let (tx, rx) = tokio::sync::mpsc::unbounded_channel();
    std::thread::spawn(move || loop {
        match feed.recv_timeout(Duration::from_millis(500)) {
            Ok(n) => {
                if tx.send(n).is_err() {
                    break;
                }
            }
            Err(RecvTimeoutError::Timeout) if !tx.is_closed() => {}
            Err(_) => break,
        }
    });
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        let n = rx.recv().await?;
        Some((Ok(Event::default().event(n.stream).data(n.record.to_string())), rx))
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

/// Serves the API on `addr` until interrupted.
pub async fn serve(rt: Shared, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(rt))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
