//! JSON bodies exchanged over the API. Timestamps are epoch milliseconds.

use std::collections::{BTreeMap, BTreeSet};

use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use mastery_core::ledger::{CorrectionDirection, LedgerError, RequestRecord, RequestState};
use mastery_core::planning::BurndownSeries;
use mastery_core::queue::QueueError;
use mastery_core::{AchievementId, ExaminerId, GradeLevel, RequestId, SessionId, StudentId, Timestamp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitBody {
    pub achievements: Vec<AchievementId>,
    /// Second student for a pair demonstration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<StudentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectPitchBody {
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionBody {
    pub student: StudentId,
    pub achievement: AchievementId,
    pub direction: CorrectionDirection,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenSessionBody {
    pub examiners: BTreeSet<ExaminerId>,
    /// Defaults to four hours after opening.
    #[serde(default)]
    pub closes_at: Option<Timestamp>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloseSessionBody {
    /// Defaults to the open session.
    #[serde(default)]
    pub session: Option<SessionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestView {
    pub id: RequestId,
    pub session: SessionId,
    pub state: RequestState,
    pub students: Vec<StudentId>,
    pub achievements: Vec<AchievementId>,
    pub rechecks: BTreeMap<StudentId, Vec<AchievementId>>,
    /// Pending requests ahead of this one; absent once claimed.
    pub queue_position: Option<usize>,
    pub pending_total: usize,
    pub claimed_by: Option<ExaminerId>,
    pub submitted_at: Timestamp,
    pub claimed_at: Option<Timestamp>,
    pub completed_at: Option<Timestamp>,
    pub cancelled_at: Option<Timestamp>,
    pub notifications: Vec<String>,
}

impl RequestView {
    pub fn new(r: &RequestRecord, queue_position: Option<usize>, pending_total: usize) -> Self {
        Self {
            id: r.id,
            session: r.session,
            state: r.state,
            students: r.students.clone(),
            achievements: r.requested.clone(),
            rechecks: r.rechecks.clone(),
            queue_position,
            pending_total,
            claimed_by: r.claimed_by.clone(),
            submitted_at: r.submitted_at,
            claimed_at: r.claimed_at,
            completed_at: r.completed_at,
            cancelled_at: r.cancelled_at,
            notifications: r.notifications.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressView {
    pub student: StudentId,
    pub passed: BTreeSet<AchievementId>,
    pub pending_rechecks: Vec<AchievementId>,
    pub grade: Option<GradeLevel>,
    pub attainable: Vec<GradeLevel>,
    pub attempts_used: u32,
    pub attempts_left: u32,
    /// Present when a schedule is loaded.
    pub burndown: Option<BurndownSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub last_seq: u64,
    pub students: usize,
    pub pending: usize,
    pub open_session: Option<SessionId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    pub fn unauthenticated() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "UNAUTHENTICATED", "missing or unknown bearer token")
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "FORBIDDEN", "not permitted for this role")
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }

    pub fn retry_later() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "RETRY_LATER", "writer busy, retry shortly")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }
}

impl From<QueueError> for ApiError {
    fn from(e: QueueError) -> Self {
        let status = match &e {
            QueueError::UnknownRequest(_) | QueueError::UnknownSession(_) => StatusCode::NOT_FOUND,
            QueueError::InvalidSheet(_) | QueueError::InvalidPolicy(_) => StatusCode::UNPROCESSABLE_ENTITY,
            // The projection accepted the events but the file refused them.
            QueueError::Ledger(LedgerError::Io(_)) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::CONFLICT,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { code: self.code.into(), message: self.message };
        let mut resp = (self.status, Json(body)).into_response();
        if self.status == StatusCode::SERVICE_UNAVAILABLE {
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
        }
        resp
    }
}
