//! axum routes under `/v1`, each a thin mapping onto [`ApiRequest`].

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{ApiRequest, ApiResponse, ProofSubmission, Service};
use crate::asset::QuestionId;
use crate::modality::AnswerPayload;
use crate::presence::ChallengeSpec;

type Shared = Arc<Service>;

fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(|t| t.trim().to_string())
}

fn respond(svc: &Service, headers: &HeaderMap, req: ApiRequest) -> Response {
    let ndjson = matches!(req, ApiRequest::Export { .. });
    let res = svc.handle(bearer(headers).as_deref(), req);
    to_http(res, ndjson)
}

fn to_http(res: ApiResponse, ndjson: bool) -> Response {
    let status = StatusCode::from_u16(res.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    match res.body {
        Value::String(text) if ndjson && status.is_success() => {
            (status, [(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response()
        }
        body => (status, Json(body)).into_response(),
    }
}

fn bad_json(e: impl std::fmt::Display) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": "InvalidBody", "message": e.to_string() }))).into_response()
}

#[allow(clippy::result_large_err)]
fn parse<T: for<'de> Deserialize<'de>>(body: &str) -> Result<T, Response> {
    serde_json::from_str(if body.trim().is_empty() { "{}" } else { body }).map_err(bad_json)
}

#[derive(Deserialize)]
struct NewProject {
    name: String,
    #[serde(default)]
    auto_assign: bool,
}

#[derive(Deserialize)]
struct NewTask {
    name: String,
}

#[derive(Deserialize)]
struct NewAssignment {
    asset_id: String,
    task_id: String,
    #[serde(default)]
    participants: BTreeSet<String>,
}

#[derive(Deserialize)]
struct NewCode {
    #[serde(default)]
    max_uses: Option<u32>,
    #[serde(default)]
    ttl_s: Option<u64>,
}

#[derive(Deserialize)]
struct NewChallenge {
    question_id: QuestionId,
    spec: ChallengeSpec,
    #[serde(default = "default_ttl")]
    ttl_s: u64,
}

fn default_ttl() -> u64 {
    3600
}

#[derive(Deserialize)]
struct SubscribeBody {
    code: String,
    #[serde(default)]
    pseudonym: Option<String>,
}

#[derive(Deserialize)]
struct NewSession {
    assignment_id: String,
}

#[derive(Deserialize)]
struct Location {
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct Answer {
    question_id: QuestionId,
    payload: AnswerPayload,
    lat: f64,
    lon: f64,
    #[serde(default)]
    proof: Option<ProofSubmission>,
}

macro_rules! body {
    ($t:ty, $b:expr) => {
        match parse::<$t>(&$b) {
            Ok(v) => v,
            Err(r) => return r,
        }
    };
}

pub fn router(svc: Shared) -> Router {
    Router::new()
        .route(
            "/v1/projects",
            post(|State(s): State<Shared>, h: HeaderMap, b: String| async move {
                let p = body!(NewProject, b);
                respond(&s, &h, ApiRequest::CreateProject { name: p.name, auto_assign: p.auto_assign })
            }),
        )
        .route(
            "/v1/projects/{id}",
            get(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>| async move {
                respond(&s, &h, ApiRequest::GetProject { project_id: id })
            }),
        )
        .route(
            "/v1/projects/{id}/assets",
            post(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>, b: String| async move {
                respond(&s, &h, ApiRequest::UploadAsset { project_id: id, document: b })
            }),
        )
        .route(
            "/v1/projects/{id}/tasks",
            post(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>, b: String| async move {
                let t = body!(NewTask, b);
                respond(&s, &h, ApiRequest::CreateTask { project_id: id, name: t.name })
            }),
        )
        .route(
            "/v1/projects/{id}/access-codes",
            post(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>, b: String| async move {
                let c = body!(NewCode, b);
                respond(&s, &h, ApiRequest::CreateAccessCode { project_id: id, max_uses: c.max_uses, ttl_s: c.ttl_s })
            }),
        )
        .route(
            "/v1/assets/{id}",
            get(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>| async move {
                respond(&s, &h, ApiRequest::GetAsset { asset_id: id })
            })
            .put(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>, b: String| async move {
                respond(&s, &h, ApiRequest::ReplaceAsset { asset_id: id, document: b })
            }),
        )
        .route(
            "/v1/assets/{id}/challenges",
            post(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>, b: String| async move {
                let c = body!(NewChallenge, b);
                respond(
                    &s,
                    &h,
                    ApiRequest::IssueChallenge { asset_id: id, question_id: c.question_id, spec: c.spec, ttl_s: c.ttl_s },
                )
            }),
        )
        .route(
            "/v1/tasks/{id}/activate",
            post(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>| async move {
                respond(&s, &h, ApiRequest::ActivateTask { task_id: id })
            }),
        )
        .route(
            "/v1/tasks/{id}/close",
            post(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>| async move {
                respond(&s, &h, ApiRequest::CloseTask { task_id: id })
            }),
        )
        .route(
            "/v1/tasks/{id}/aggregate",
            get(
                |State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>, Query(q): Query<HashMap<String, String>>| async move {
                    let function = q.get("fn").cloned().unwrap_or_else(|| "avg".into());
                    respond(&s, &h, ApiRequest::GetAggregate { task_id: id, function })
                },
            ),
        )
        .route(
            "/v1/tasks/{id}/export",
            get(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>| async move {
                respond(&s, &h, ApiRequest::Export { task_id: id })
            }),
        )
        .route(
            "/v1/assignments",
            post(|State(s): State<Shared>, h: HeaderMap, b: String| async move {
                let a = body!(NewAssignment, b);
                respond(
                    &s,
                    &h,
                    ApiRequest::CreateAssignment { asset_id: a.asset_id, task_id: a.task_id, participants: a.participants },
                )
            }),
        )
        .route(
            "/v1/subscribe",
            post(|State(s): State<Shared>, h: HeaderMap, b: String| async move {
                let sub = body!(SubscribeBody, b);
                respond(&s, &h, ApiRequest::Subscribe { code: sub.code, pseudonym: sub.pseudonym })
            }),
        )
        .route(
            "/v1/participants/{id}/tasks",
            get(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>| async move {
                respond(&s, &h, ApiRequest::ListTasks { participant_id: id })
            }),
        )
        .route(
            "/v1/sessions",
            post(|State(s): State<Shared>, h: HeaderMap, b: String| async move {
                let n = body!(NewSession, b);
                respond(&s, &h, ApiRequest::StartSession { assignment_id: n.assignment_id })
            }),
        )
        .route(
            "/v1/sessions/{id}",
            get(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>| async move {
                respond(&s, &h, ApiRequest::GetSession { session_id: id })
            }),
        )
        .route(
            "/v1/sessions/{id}/locations",
            post(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>, b: String| async move {
                let l = body!(Location, b);
                respond(&s, &h, ApiRequest::PostLocation { session_id: id, lat: l.lat, lon: l.lon })
            }),
        )
        .route(
            "/v1/sessions/{id}/answers",
            post(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>, b: String| async move {
                let a = body!(Answer, b);
                respond(
                    &s,
                    &h,
                    ApiRequest::PostAnswer {
                        session_id: id,
                        question_id: a.question_id,
                        payload: a.payload,
                        lat: a.lat,
                        lon: a.lon,
                        proof: a.proof,
                    },
                )
            }),
        )
        .route(
            "/v1/sessions/{id}/sensors",
            post(|State(s): State<Shared>, h: HeaderMap, Path(id): Path<String>, b: String| async move {
                respond(&s, &h, ApiRequest::PostSensors { session_id: id, batch: b })
            }),
        )
        .with_state(svc)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("invalid listen address {0:?}")]
    Address(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serves until ctrl-c.
pub async fn serve(svc: Shared) -> Result<(), ServeError> {
    let addr: SocketAddr = svc
        .config()
        .listen
        .parse()
        .map_err(|_| ServeError::Address(svc.config().listen.clone()))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
