//! HTTP routes. Every route names the roles it admits; [`authorize`] is the
//! only gate.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap};
use axum::routing::{get, post};
use axum::{Json, Router};
use mastery_core::analytics;
use mastery_core::planning::{actual_burndown, cohort_burnup, CourseSchedule};
use mastery_core::queue::{feed, GradingSheet};
use mastery_core::{CourseCatalog, ExaminerId, GradeLevel, RequestId, StudentId, Timestamp};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::auth::{bearer, ApiSession, Authenticator, Role};
use crate::wire::{
    ApiError, CloseSessionBody, CorrectionBody, Health, OpenSessionBody, ProgressView, RejectPitchBody, SubmitBody,
};
use crate::writer::{Clock, Command, WriterHandle};

#[derive(Clone)]
pub struct AppState {
    pub writer: WriterHandle,
    pub auth: Arc<dyn Authenticator>,
    pub clock: Clock,
}

type ApiResult = Result<Json<Value>, ApiError>;

const STAFF: &[Role] = &[Role::Examiner, Role::Admin];
const ANYONE: &[Role] = &[Role::Student, Role::Examiner, Role::Admin];

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/catalog", get(get_catalog))
        .route("/requests", post(submit))
        .route("/requests/{id}", get(get_request).delete(cancel))
        .route("/requests/{id}/claim", post(claim))
        .route("/requests/{id}/reject-pitch", post(reject_pitch))
        .route("/requests/{id}/results", post(results))
        .route("/feed", get(get_feed))
        .route("/students/{id}/progress", get(progress))
        .route("/stats/waiting", get(stats_waiting))
        .route("/stats/achievements", get(stats_achievements))
        .route("/stats/cohort", get(stats_cohort))
        .route("/stats/burnup", get(stats_burnup))
        .route("/admin/corrections", post(correction))
        .route("/admin/catalog", post(upload_catalog))
        .route("/admin/schedule", post(upload_schedule))
        .route("/admin/sessions/open", post(open_session))
        .route("/admin/sessions/close", post(close_session))
        .fallback(|| async { ApiError::new(axum::http::StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint") })
        .with_state(state)
}

/// Resolves the caller and checks their role against `allowed`.
pub fn authorize(state: &AppState, headers: &HeaderMap, allowed: &[Role]) -> Result<ApiSession, ApiError> {
    let session = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(bearer)
        .and_then(|t| state.auth.authenticate(t))
        .ok_or_else(ApiError::unauthenticated)?;
    if !allowed.contains(&session.role) {
        return Err(ApiError::forbidden());
    }
    Ok(session)
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    b.map(|Json(t)| t).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn request_id(p: Result<Path<u64>, PathRejection>) -> Result<RequestId, ApiError> {
    p.map(|Path(id)| RequestId(id)).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    let snap = s.writer.snapshot();
    Json(Health {
        status: "ok".into(),
        last_seq: snap.state.last_seq,
        students: snap.state.students.len(),
        pending: snap.state.pending().len(),
        open_session: snap.state.open_session().map(|s| s.id),
    })
}

async fn get_catalog(State(s): State<AppState>, headers: HeaderMap) -> ApiResult {
    authorize(&s, &headers, ANYONE)?;
    Ok(Json(json!(*s.writer.snapshot().catalog)))
}

async fn submit(
    State(s): State<AppState>,
    headers: HeaderMap,
    b: Result<Json<SubmitBody>, JsonRejection>,
) -> ApiResult {
    let who = authorize(&s, &headers, &[Role::Student])?;
    let body = body(b)?;
    Ok(Json(s.writer.send(Command::Submit { student: StudentId(who.actor), body }).await?))
}

async fn get_request(State(s): State<AppState>, headers: HeaderMap, id: Result<Path<u64>, PathRejection>) -> ApiResult {
    let who = authorize(&s, &headers, ANYONE)?;
    let id = request_id(id)?;
    let view = s.writer.snapshot().request_view(id).ok_or(mastery_core::queue::QueueError::UnknownRequest(id))?;
    if who.role == Role::Student && !view.students.iter().any(|st| st.as_str() == who.actor) {
        return Err(ApiError::forbidden());
    }
    Ok(Json(json!(view)))
}

async fn cancel(State(s): State<AppState>, headers: HeaderMap, id: Result<Path<u64>, PathRejection>) -> ApiResult {
    let who = authorize(&s, &headers, &[Role::Student])?;
    let request = request_id(id)?;
    Ok(Json(s.writer.send(Command::Cancel { student: StudentId(who.actor), request }).await?))
}

async fn claim(State(s): State<AppState>, headers: HeaderMap, id: Result<Path<u64>, PathRejection>) -> ApiResult {
    let who = authorize(&s, &headers, &[Role::Examiner])?;
    let request = request_id(id)?;
    Ok(Json(s.writer.send(Command::Claim { examiner: ExaminerId(who.actor), request }).await?))
}

async fn reject_pitch(
    State(s): State<AppState>,
    headers: HeaderMap,
    id: Result<Path<u64>, PathRejection>,
    b: Result<Json<RejectPitchBody>, JsonRejection>,
) -> ApiResult {
    let who = authorize(&s, &headers, &[Role::Examiner])?;
    let request = request_id(id)?;
    let note = body(b)?.note;
    Ok(Json(s.writer.send(Command::RejectPitch { examiner: ExaminerId(who.actor), request, note }).await?))
}

async fn results(
    State(s): State<AppState>,
    headers: HeaderMap,
    id: Result<Path<u64>, PathRejection>,
    b: Result<Json<GradingSheet>, JsonRejection>,
) -> ApiResult {
    let who = authorize(&s, &headers, &[Role::Examiner])?;
    let request = request_id(id)?;
    let sheet = body(b)?;
    Ok(Json(s.writer.send(Command::Results { examiner: ExaminerId(who.actor), request, sheet }).await?))
}

async fn get_feed(State(s): State<AppState>, headers: HeaderMap) -> ApiResult {
    authorize(&s, &headers, STAFF)?;
    let snap = s.writer.snapshot();
    Ok(Json(json!(feed(&snap.state, (s.clock)()))))
}

#[derive(Debug, Deserialize)]
struct ProgressQuery {
    target: Option<GradeLevel>,
}

async fn progress(
    State(s): State<AppState>,
    headers: HeaderMap,
    id: Result<Path<String>, PathRejection>,
    q: Result<Query<ProgressQuery>, QueryRejection>,
) -> ApiResult {
    let who = authorize(&s, &headers, ANYONE)?;
    let student = StudentId(id.map_err(|e| ApiError::bad_request(e.body_text()))?.0);
    if who.role == Role::Student && who.actor != student.as_str() {
        return Err(ApiError::forbidden());
    }
    let q = q.map_err(|e| ApiError::bad_request(e.body_text()))?.0;
    let snap = s.writer.snapshot();
    Ok(Json(json!(progress_view(
        &snap.catalog,
        snap.schedule.as_deref(),
        &snap.state,
        &snap.entries,
        &snap.policy,
        student,
        q.target
    )?)))
}

fn progress_view(
    catalog: &CourseCatalog,
    schedule: Option<&CourseSchedule>,
    state: &mastery_core::ledger::Projection,
    entries: &[mastery_core::LogEntry],
    policy: &mastery_core::QueuePolicy,
    student: StudentId,
    target: Option<GradeLevel>,
) -> Result<ProgressView, ApiError> {
    let record = state.student(&student).cloned().unwrap_or_default();
    let unprocessable = |m: String| ApiError::new(axum::http::StatusCode::UNPROCESSABLE_ENTITY, "UNKNOWN_LEVEL", m);
    // Achievements since removed from the catalog do not count.
    let passed: std::collections::BTreeSet<_> = record.passed.iter().filter(|a| catalog.contains(a)).cloned().collect();
    let grade = catalog.compute_grade(&passed).map_err(|e| ApiError::internal(e.to_string()))?;
    let attempts_left = policy.attempt_budget.saturating_sub(record.attempts_used);
    let attainable = catalog.attainable_grades(&passed, attempts_left, policy.per_attempt_cap);
    let burndown = match (schedule, target.or_else(|| catalog.levels.last().cloned())) {
        (Some(schedule), Some(target)) => Some(
            actual_burndown(entries, &student, &target, catalog, schedule).map_err(|e| unprocessable(e.to_string()))?,
        ),
        _ => None,
    };
    Ok(ProgressView {
        student,
        passed,
        pending_rechecks: record.pending_rechecks.clone(),
        grade,
        attainable,
        attempts_used: record.attempts_used,
        attempts_left,
        burndown,
    })
}

#[derive(Debug, Deserialize)]
struct WindowQuery {
    from: Option<i64>,
    to: Option<i64>,
}

async fn stats_waiting(
    State(s): State<AppState>,
    headers: HeaderMap,
    q: Result<Query<WindowQuery>, QueryRejection>,
) -> ApiResult {
    authorize(&s, &headers, STAFF)?;
    let q = q.map_err(|e| ApiError::bad_request(e.body_text()))?.0;
    let window = match (q.from, q.to) {
        (None, None) => None,
        (from, to) => Some((Timestamp(from.unwrap_or(i64::MIN)), Timestamp(to.unwrap_or(i64::MAX)))),
    };
    Ok(Json(json!(analytics::waiting_times(&s.writer.snapshot().entries, window))))
}

async fn stats_achievements(State(s): State<AppState>, headers: HeaderMap) -> ApiResult {
    authorize(&s, &headers, STAFF)?;
    let snap = s.writer.snapshot();
    Ok(Json(json!(analytics::achievement_stats(&snap.entries, &snap.catalog))))
}

async fn stats_cohort(State(s): State<AppState>, headers: HeaderMap) -> ApiResult {
    authorize(&s, &headers, STAFF)?;
    let snap = s.writer.snapshot();
    let cohort = analytics::cohort_progress(&snap.entries, &snap.catalog, &snap.policy)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(json!(cohort)))
}

async fn stats_burnup(State(s): State<AppState>, headers: HeaderMap) -> ApiResult {
    authorize(&s, &headers, STAFF)?;
    let snap = s.writer.snapshot();
    let burnup = cohort_burnup(&snap.entries, &snap.catalog).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(json!(burnup)))
}

async fn correction(
    State(s): State<AppState>,
    headers: HeaderMap,
    b: Result<Json<CorrectionBody>, JsonRejection>,
) -> ApiResult {
    authorize(&s, &headers, &[Role::Admin])?;
    Ok(Json(s.writer.send(Command::Correction(body(b)?)).await?))
}

async fn upload_catalog(
    State(s): State<AppState>,
    headers: HeaderMap,
    b: Result<Json<CourseCatalog>, JsonRejection>,
) -> ApiResult {
    authorize(&s, &headers, &[Role::Admin])?;
    Ok(Json(s.writer.send(Command::Catalog(body(b)?)).await?))
}

async fn upload_schedule(
    State(s): State<AppState>,
    headers: HeaderMap,
    b: Result<Json<CourseSchedule>, JsonRejection>,
) -> ApiResult {
    authorize(&s, &headers, &[Role::Admin])?;
    Ok(Json(s.writer.send(Command::Schedule(body(b)?)).await?))
}

async fn open_session(
    State(s): State<AppState>,
    headers: HeaderMap,
    b: Result<Json<OpenSessionBody>, JsonRejection>,
) -> ApiResult {
    authorize(&s, &headers, &[Role::Admin])?;
    Ok(Json(s.writer.send(Command::OpenSession(body(b)?)).await?))
}

async fn close_session(
    State(s): State<AppState>,
    headers: HeaderMap,
    b: Result<Json<CloseSessionBody>, JsonRejection>,
) -> ApiResult {
    authorize(&s, &headers, &[Role::Admin])?;
    Ok(Json(s.writer.send(Command::CloseSession(body(b)?)).await?))
}
