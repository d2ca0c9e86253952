use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mopref_core::feedback::QuerySide;
use mopref_core::trajset::TrajectorySetDocument;
use mopref_core::{
    expand_compress, ComparisonQuery, ElicitationReport64, EngineConfig, Momdp64, Phase, PolicyDocument,
    Representation, Verdict,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::log::{now_ms, Event, EventLog};
use crate::session::{replay, Session, Status};
use crate::AppState;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/query", get(fetch_query))
        .route("/sessions/{id}/answer", post(submit_answer))
        .route("/sessions/{id}/result", get(fetch_result))
        .route("/sessions/{id}/abort", post(abort_session))
        .with_state(state)
}

#[derive(Debug, thiserror::Error)]
enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Gone(String),
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Gone(_) => StatusCode::GONE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Internal(format!("persistence failure: {e}"))
    }
}

type ApiResult = Result<Response, ApiError>;

#[derive(Serialize)]
struct ComponentPayload {
    weight: f64,
    policy: PolicyDocument,
}

#[derive(Serialize)]
struct SidePayload {
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectories: Option<TrajectorySetDocument>,
    /// Explicit policy and value, only when explicit payloads were requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    policy: Option<Vec<ComponentPayload>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct Progress {
    answered: usize,
    cap: usize,
}

#[derive(Serialize)]
struct QueryPayload {
    query_id: String,
    phase: Phase,
    left: SidePayload,
    right: SidePayload,
    objectives: usize,
    progress: Progress,
}

fn side_payload(mdp: &Momdp64, side: &QuerySide<f64>) -> SidePayload {
    match &side.trajectories {
        Some(set) => SidePayload { trajectories: Some(set.to_document(mdp)), policy: None, value: None },
        None => SidePayload {
            trajectories: None,
            policy: Some(
                side.policy
                    .components()
                    .iter()
                    .map(|(w, p)| ComponentPayload { weight: *w, policy: PolicyDocument::from_policy(mdp, p) })
                    .collect(),
            ),
            value: Some(side.value.0.clone()),
        },
    }
}

fn query_payload(session: &Session, query: &ComparisonQuery<f64>) -> QueryPayload {
    let k = session.mdp.objectives();
    QueryPayload {
        query_id: query.query_id.clone(),
        phase: query.comparison.phase,
        left: side_payload(&session.mdp, &query.comparison.left),
        right: side_payload(&session.mdp, &query.comparison.right),
        objectives: k,
        progress: Progress { answered: session.verdicts.len(), cap: session.config.query_cap(k, k) },
    }
}

#[derive(Serialize)]
struct StatusBody<'a> {
    session_id: &'a str,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    query: Option<QueryPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a ElicitationReport64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// Current state of a session; a finished session's report is included when
/// `with_report` is set.
fn status_body(session: &Session, with_report: bool) -> StatusBody<'_> {
    let mut body = StatusBody {
        session_id: &session.id,
        status: session.status.name(),
        query: None,
        result: None,
        report: None,
        error: None,
    };
    match &session.status {
        Status::Active(q) => body.query = Some(query_payload(session, q)),
        Status::Complete(report) => {
            body.result = Some(format!("/sessions/{}/result", session.id));
            if with_report {
                body.report = Some(report);
            }
        }
        Status::Failed(message) => body.error = Some(message),
        Status::Aborted => {}
    }
    body
}

#[derive(Serialize)]
struct ResultBody<'a> {
    session_id: &'a str,
    status: &'static str,
    report: &'a ElicitationReport64,
    output_policy: PolicyDocument,
    /// Weighted trajectory set of the recommended policy.
    recommended: TrajectorySetDocument,
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

fn parse_config(raw: Option<&Value>) -> Result<EngineConfig, ApiError> {
    // Sessions present trajectory sets unless explicit payloads are asked for.
    let mut raw = raw.cloned().unwrap_or_else(|| json!({}));
    let Some(obj) = raw.as_object_mut() else {
        return Err(ApiError::BadRequest("config must be an object".into()));
    };
    obj.entry("representation").or_insert_with(|| json!(Representation::TrajectorySet));
    let config: EngineConfig =
        serde_json::from_value(raw).map_err(|e| ApiError::BadRequest(format!("invalid config: {e}")))?;
    let positive = |x: f64| x.is_finite() && x > 0.0;
    if !(positive(config.eta_min) && positive(config.eta_stop) && positive(config.precision_rel_tol))
        || !(config.tau_rank_scale.is_finite() && config.tau_rank_scale >= 0.0)
    {
        return Err(ApiError::BadRequest("invalid config: tolerances must be positive".into()));
    }
    Ok(config)
}

async fn advance(state: &AppState, session: &mut Session) -> Result<(), ApiError> {
    let mdp = Arc::clone(&session.mdp);
    let config = session.config;
    let verdicts = session.verdicts.clone();
    let cache = state.inner.cache.clone();
    let status = tokio::task::spawn_blocking(move || replay(&mdp, &config, &verdicts, &cache))
        .await
        .map_err(|e| ApiError::Internal(format!("elicitation task failed: {e}")))?;
    session.status = status;
    session.updated = now_ms();
    Ok(())
}

async fn create_session(State(state): State<AppState>, Json(body): Json<Value>) -> ApiResult {
    let instance_id = body
        .get("instance")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::BadRequest("missing string field \"instance\"".into()))?;
    let mdp =
        state.instance(instance_id).ok_or_else(|| ApiError::NotFound(format!("unknown instance {instance_id:?}")))?;
    let config = parse_config(body.get("config"))?;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let created = now_ms();
    let mut log = EventLog::create(EventLog::path_for(state.data_dir(), &id))?;
    log.append(&Event::Created {
        session_id: id.clone(),
        instance_id: instance_id.to_string(),
        instance_digest: mdp.digest().to_string(),
        config,
        timestamp: created,
    })?;
    let mut session = Session {
        id: id.clone(),
        instance_id: instance_id.to_string(),
        mdp,
        config,
        verdicts: Vec::new(),
        status: Status::Aborted,
        log,
        created,
        updated: created,
    };
    advance(&state, &mut session).await?;
    let response = (StatusCode::CREATED, Json(status_body(&session, true))).into_response();
    state.insert(id, session);
    Ok(response)
}

async fn fetch_query(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let handle = state.session(&id).ok_or_else(|| ApiError::NotFound(format!("unknown session {id:?}")))?;
    let session = handle.lock().await;
    Ok(Json(status_body(&session, false)).into_response())
}

async fn submit_answer(State(state): State<AppState>, Path(id): Path<String>, Json(body): Json<Value>) -> ApiResult {
    let handle = state.session(&id).ok_or_else(|| ApiError::NotFound(format!("unknown session {id:?}")))?;
    let query_id = body
        .get("query_id")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::BadRequest("missing string field \"query_id\"".into()))?;
    let verdict =
        body.get("verdict").and_then(Value::as_str).and_then(Verdict::parse).ok_or_else(|| {
            ApiError::BadRequest("verdict must be \"left\", \"right\" or \"indistinguishable\"".into())
        })?;

    let mut session = handle.lock().await;
    let pending = session
        .pending()
        .ok_or_else(|| ApiError::Conflict(format!("session is {}, not awaiting an answer", session.status.name())))?;
    if pending.query_id != query_id {
        return Err(ApiError::Conflict(format!(
            "query {query_id:?} is not pending; the pending query is {:?}",
            pending.query_id
        )));
    }
    session.log.append(&Event::Answered { query_id: query_id.to_string(), verdict, timestamp: now_ms() })?;
    session.verdicts.push(verdict);
    advance(&state, &mut session).await?;
    Ok(Json(status_body(&session, true)).into_response())
}

async fn fetch_result(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let handle = state.session(&id).ok_or_else(|| ApiError::NotFound(format!("unknown session {id:?}")))?;
    let session = handle.lock().await;
    match &session.status {
        Status::Complete(report) => {
            let body = ResultBody {
                session_id: &session.id,
                status: "complete",
                report,
                output_policy: PolicyDocument::from_policy(&session.mdp, &report.output_policy),
                recommended: expand_compress(&session.mdp, &report.output_policy).to_document(&session.mdp),
            };
            Ok(Json(body).into_response())
        }
        Status::Active(_) => Err(ApiError::Conflict("session is still active".into())),
        Status::Aborted => Err(ApiError::Gone("session was aborted".into())),
        Status::Failed(message) => Err(ApiError::Internal(format!("session failed: {message}"))),
    }
}

async fn abort_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let handle = state.session(&id).ok_or_else(|| ApiError::NotFound(format!("unknown session {id:?}")))?;
    let mut session = handle.lock().await;
    if let Status::Active(_) = session.status {
        session.log.append(&Event::Aborted { timestamp: now_ms() })?;
        session.status = Status::Aborted;
        session.updated = now_ms();
        Ok(Json(status_body(&session, false)).into_response())
    } else {
        Err(ApiError::Conflict(format!("session is {}", session.status.name())))
    }
}
