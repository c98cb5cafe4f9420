//! JSON endpoints that let a person answer elicitation queries.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | session config, or empty for the server defaults | `{"id"}` |
//! | GET | `/sessions/{id}/query` | | pending query view, or `{"done": true}` |
//! | POST | `/sessions/{id}/answer` | `{"query_id", "preferred": "left" \| "right"}` | `{"accepted", "phase", "answered"}` |
//! | GET | `/sessions/{id}/result` | | metric, query counts, match fraction |
//!
//! Errors come back as `{"error": "..."}` with 400 for bad input, 404 for an
//! unknown session, and 409 for a stale answer or a premature result request.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use metric_elicit::session::{Preference, Session, SessionConfig};
use metric_elicit::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uuid::Uuid;

type Shared = Arc<Mutex<Session>>;

/// Live sessions. Each session sits behind its own lock so one session's
/// answers are serialized without blocking the others.
#[derive(Clone, Default)]
pub struct SessionRegistry {
    sessions: Arc<Mutex<HashMap<Uuid, Shared>>>,
}

impl SessionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, session: Session) -> Uuid {
        let id = Uuid::new_v4();
        self.sessions.lock().expect("registry lock").insert(id, Arc::new(Mutex::new(session)));
        id
    }

    pub fn get(&self, id: &Uuid) -> Option<Shared> {
        self.sessions.lock().expect("registry lock").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone)]
struct AppState {
    registry: SessionRegistry,
    defaults: SessionConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub query_id: u64,
    pub preferred: Preference,
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::StaleQuery { .. } | Error::NotDone => StatusCode::CONFLICT,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Builds the router. `defaults` is used when a session is created with an empty body.
pub fn router(registry: SessionRegistry, defaults: SessionConfig) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", get(next_query))
        .route("/sessions/{id}/answer", post(submit_answer))
        .route("/sessions/{id}/result", get(result))
        .with_state(AppState { registry, defaults })
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, defaults: SessionConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(SessionRegistry::new(), defaults)).await
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Shared> {
    let uuid = Uuid::parse_str(id).map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
    state.registry.get(&uuid).ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")))
}

fn blocking_error(e: tokio::task::JoinError) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let config = if body.iter().all(u8::is_ascii_whitespace) {
        state.defaults.clone()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?
    };
    let session = tokio::task::spawn_blocking(move || Session::new(config)).await.map_err(blocking_error)??;
    let id = state.registry.insert(session);
    Ok((StatusCode::CREATED, Json(json!({ "id": id.to_string() }))))
}

async fn next_query(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let shared = lookup(&state, &id)?;
    let session = shared.lock().expect("session lock");
    match session.view()? {
        Some(view) => {
            let mut v = serde_json::to_value(view).map_err(Error::from)?;
            v["done"] = json!(false);
            Ok(Json(v))
        }
        None => Ok(Json(json!({ "done": true, "phase": session.phase() }))),
    }
}

async fn submit_answer(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let shared = lookup(&state, &id)?;
    let req: AnswerRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    let reply = tokio::task::spawn_blocking(move || -> Result<Value, Error> {
        let mut session = shared.lock().expect("session lock");
        session.answer(req.query_id, req.preferred)?;
        Ok(json!({ "accepted": true, "phase": session.phase(), "answered": session.answered() }))
    })
    .await
    .map_err(blocking_error)??;
    Ok(Json(reply))
}

async fn result(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let shared = lookup(&state, &id)?;
    let session = shared.lock().expect("session lock");
    let res = session.result()?;
    Ok(Json(serde_json::to_value(res).map_err(Error::from)?))
}
