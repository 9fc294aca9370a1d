//! Live demonstration queue.
//!
//! [`Engine`] validates each command against the catalog, the policy and the
//! replayed ledger state, then records the resulting events through the
//! ledger's single writer. Read-side helpers ([`feed`], [`queue_position`])
//! work on any [`Projection`] snapshot.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{AchievementKind, CourseCatalog, ExamContext};
use crate::ids::{AchievementId, ExaminerId, RequestId, SessionId, StudentId, Timestamp};
use crate::ledger::{
    CancelReason, CorrectionDirection, Event, Ledger, LedgerError, LogEntry, OutcomeEvent, Projection, RequestRecord,
    RequestState, SessionRecord, StudentRecord, Verdict,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueuePolicy {
    /// Achievements (requested plus re-checks) graded per student per request.
    pub per_attempt_cap: u32,
    /// Completed requests a student may consume over the course.
    pub attempt_budget: u32,
    pub per_session_attempt_cap: u32,
    /// Passed assignment achievements needed before re-checks start.
    pub recheck_enable_threshold: u32,
    pub recheck_probability: f64,
}

impl Default for QueuePolicy {
    fn default() -> Self {
        Self {
            per_attempt_cap: 4,
            attempt_budget: 30,
            per_session_attempt_cap: 2,
            recheck_enable_threshold: 2,
            recheck_probability: 1.0,
        }
    }
}

impl QueuePolicy {
    pub fn validate(&self) -> Result<(), QueueError> {
        let counts = [
            ("per_attempt_cap", self.per_attempt_cap),
            ("attempt_budget", self.attempt_budget),
            ("per_session_attempt_cap", self.per_session_attempt_cap),
        ];
        if let Some((field, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(QueueError::InvalidPolicy(format!("{field} must be at least 1")));
        }
        if !(0.0..=1.0).contains(&self.recheck_probability) {
            return Err(QueueError::InvalidPolicy("recheck_probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Examiner verdict on one stated achievement. On an injected re-check,
/// `Fail` and `Pushback` both record a failed re-check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SheetVerdict {
    Pass,
    Fail,
    Pushback,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradingSheet {
    pub verdicts: BTreeMap<StudentId, BTreeMap<AchievementId, SheetVerdict>>,
}

impl GradingSheet {
    pub fn set(&mut self, student: impl Into<StudentId>, achievement: impl Into<AchievementId>, v: SheetVerdict) {
        self.verdicts.entry(student.into()).or_default().insert(achievement.into(), v);
    }

    /// A sheet giving `verdict` on everything stated for every participant.
    pub fn uniform(request: &RequestRecord, verdict: SheetVerdict) -> Self {
        let mut sheet = Self::default();
        for s in &request.students {
            for a in request.stated_for(s) {
                sheet.set(s.clone(), a.clone(), verdict);
            }
        }
        sheet
    }
}

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("no lab session is open")]
    SessionClosed,
    #[error("{student} already has pending request {request}")]
    AlreadyPending { student: StudentId, request: RequestId },
    #[error("{requested} achievements requested, at most {allowed} allowed")]
    TooManyAchievements { requested: usize, allowed: usize },
    #[error("a request must state at least one achievement")]
    NoAchievements,
    #[error("`{achievement}` is push-back locked for {student} this session")]
    PushBackLocked { student: StudentId, achievement: AchievementId },
    #[error("{student} has no attempts left")]
    BudgetExhausted { student: StudentId },
    #[error("`{0}` is already passed by every participant")]
    AlreadyPassed(AchievementId),
    #[error("unknown achievement `{0}`")]
    UnknownAchievement(AchievementId),
    #[error("`{0}` is not demonstrated in lab sessions")]
    NotLabDemonstrable(AchievementId),
    #[error("a request needs one or two distinct students")]
    PairSizeInvalid,
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("request {request} is {state:?}")]
    NotPending { request: RequestId, state: RequestState },
    #[error("request {request} already claimed by {by}")]
    AlreadyClaimed { request: RequestId, by: ExaminerId },
    #[error("request {0} is not claimed")]
    NotClaimed(RequestId),
    #[error("examiner {0} does not serve this session")]
    ExaminerNotInSession(ExaminerId),
    #[error("{student} is not part of request {request}")]
    NotParticipant { student: StudentId, request: RequestId },
    #[error("grading sheet rejected: {0}")]
    InvalidSheet(String),
    #[error("session {0} is already open")]
    SessionAlreadyOpen(SessionId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("session {0} is already closed")]
    SessionNotOpen(SessionId),
    #[error("session must open before it closes")]
    InvalidSessionWindow,
    #[error("invalid queue policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl QueueError {
    /// Stable machine-readable code, one per variant.
    pub fn code(&self) -> &'static str {
        match self {
            QueueError::SessionClosed => "SESSION_CLOSED",
            QueueError::AlreadyPending { .. } => "ALREADY_PENDING",
            QueueError::TooManyAchievements { .. } => "TOO_MANY_ACHIEVEMENTS",
            QueueError::NoAchievements => "NO_ACHIEVEMENTS",
            QueueError::PushBackLocked { .. } => "PUSH_BACK_LOCKED",
            QueueError::BudgetExhausted { .. } => "BUDGET_EXHAUSTED",
            QueueError::AlreadyPassed(_) => "ALREADY_PASSED",
            QueueError::UnknownAchievement(_) => "UNKNOWN_ACHIEVEMENT",
            QueueError::NotLabDemonstrable(_) => "NOT_LAB_DEMONSTRABLE",
            QueueError::PairSizeInvalid => "PAIR_SIZE_INVALID",
            QueueError::UnknownRequest(_) => "UNKNOWN_REQUEST",
            QueueError::NotPending { .. } => "NOT_PENDING",
            QueueError::AlreadyClaimed { .. } => "ALREADY_CLAIMED",
            QueueError::NotClaimed(_) => "NOT_CLAIMED",
            QueueError::ExaminerNotInSession(_) => "EXAMINER_NOT_IN_SESSION",
            QueueError::NotParticipant { .. } => "NOT_PARTICIPANT",
            QueueError::InvalidSheet(_) => "INVALID_SHEET",
            QueueError::SessionAlreadyOpen(_) => "SESSION_ALREADY_OPEN",
            QueueError::UnknownSession(_) => "UNKNOWN_SESSION",
            QueueError::SessionNotOpen(_) => "SESSION_NOT_OPEN",
            QueueError::InvalidSessionWindow => "INVALID_SESSION_WINDOW",
            QueueError::InvalidPolicy(_) => "INVALID_POLICY",
            QueueError::Ledger(_) => "LEDGER_REJECTED",
        }
    }
}

/// One row of the examiner feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedEntry {
    pub request: RequestId,
    pub students: Vec<StudentId>,
    pub achievements: Vec<AchievementId>,
    pub rechecks: BTreeMap<StudentId, Vec<AchievementId>>,
    pub submitted_at: Timestamp,
    pub waited_ms: i64,
}

/// Pending requests, oldest first, with the stated achievements visible.
pub fn feed(state: &Projection, now: Timestamp) -> Vec<FeedEntry> {
    state
        .pending()
        .into_iter()
        .map(|r| FeedEntry {
            request: r.id,
            students: r.students.clone(),
            achievements: r.requested.clone(),
            rechecks: r.rechecks.clone(),
            submitted_at: r.submitted_at,
            waited_ms: (now - r.submitted_at).max(0),
        })
        .collect()
}

/// Number of pending requests ahead of `request`.
pub fn queue_position(state: &Projection, request: RequestId) -> Result<usize, QueueError> {
    let r = state.requests.get(&request).ok_or(QueueError::UnknownRequest(request))?;
    if r.state != RequestState::Pending {
        return Err(QueueError::NotPending { request, state: r.state });
    }
    Ok(state.pending().iter().take_while(|p| p.id != request).count())
}

fn session_accepting(session: &SessionRecord, now: Timestamp) -> bool {
    session.is_open() && session.opens_at <= now && now < session.closes_at
}

/// Passed assignment-kind achievements, the re-check enabling measure.
fn passed_assignments(catalog: &CourseCatalog, record: &StudentRecord) -> u32 {
    record
        .passed
        .iter()
        .filter(|a| catalog.achievement(a).is_some_and(|a| a.kind == AchievementKind::Assignment))
        .count() as u32
}

/// Queue state machine over a catalog, a policy and the ledger writer.
#[derive(Debug)]
pub struct Engine {
    catalog: CourseCatalog,
    policy: QueuePolicy,
    ledger: Ledger,
}

impl Engine {
    pub fn new(catalog: CourseCatalog, policy: QueuePolicy, ledger: Ledger) -> Result<Self, QueueError> {
        policy.validate()?;
        Ok(Self { catalog, policy, ledger })
    }

    pub fn catalog(&self) -> &CourseCatalog {
        &self.catalog
    }

    pub fn set_catalog(&mut self, catalog: CourseCatalog) {
        self.catalog = catalog;
    }

    pub fn policy(&self) -> &QueuePolicy {
        &self.policy
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn state(&self) -> &Projection {
        self.ledger.state()
    }

    pub fn into_ledger(self) -> Ledger {
        self.ledger
    }

    pub fn open_session(
        &mut self,
        opens_at: Timestamp,
        closes_at: Timestamp,
        examiners: BTreeSet<ExaminerId>,
    ) -> Result<SessionRecord, QueueError> {
        if let Some(open) = self.state().open_session() {
            return Err(QueueError::SessionAlreadyOpen(open.id));
        }
        if opens_at >= closes_at {
            return Err(QueueError::InvalidSessionWindow);
        }
        let session = self.state().next_session_id();
        self.ledger.record(opens_at, Event::SessionOpened { session, opens_at, closes_at, examiners })?;
        Ok(self.state().sessions[&session].clone())
    }

    /// Cancels the session's pending requests and closes it, clearing its
    /// push-back locks. Claimed requests may still be graded afterwards.
    pub fn close_session(&mut self, session: SessionId, now: Timestamp) -> Result<Vec<LogEntry>, QueueError> {
        let s = self.state().sessions.get(&session).ok_or(QueueError::UnknownSession(session))?;
        if !s.is_open() {
            return Err(QueueError::SessionNotOpen(session));
        }
        let mut events: Vec<Event> = self
            .state()
            .pending()
            .into_iter()
            .filter(|r| r.session == session)
            .map(|r| Event::Cancelled { request: r.id, reason: CancelReason::SessionClosed })
            .collect();
        events.push(Event::SessionClosed { session });
        Ok(self.ledger.record_all(now, events)?.to_vec())
    }

    pub fn submit_request<R: Rng + ?Sized>(
        &mut self,
        students: &[StudentId],
        achievements: &[AchievementId],
        rng: &mut R,
        now: Timestamp,
    ) -> Result<RequestRecord, QueueError> {
        let state = self.ledger.state();
        let session = state.open_session().filter(|s| session_accepting(s, now)).ok_or(QueueError::SessionClosed)?.id;

        let distinct: BTreeSet<_> = students.iter().collect();
        if students.is_empty() || students.len() > 2 || distinct.len() != students.len() {
            return Err(QueueError::PairSizeInvalid);
        }

        let mut requested: Vec<AchievementId> = Vec::new();
        for a in achievements {
            if !requested.contains(a) {
                requested.push(a.clone());
            }
        }
        let cap = self.policy.per_attempt_cap as usize;
        if requested.is_empty() {
            return Err(QueueError::NoAchievements);
        }
        if requested.len() > cap {
            return Err(QueueError::TooManyAchievements { requested: requested.len(), allowed: cap });
        }
        for a in &requested {
            let entry = self.catalog.achievement(a).ok_or_else(|| QueueError::UnknownAchievement(a.clone()))?;
            if entry.context != ExamContext::LabDemonstrable {
                return Err(QueueError::NotLabDemonstrable(a.clone()));
            }
        }

        let empty = StudentRecord::default();
        let records: Vec<&StudentRecord> = students.iter().map(|s| state.student(s).unwrap_or(&empty)).collect();

        for (student, record) in students.iter().zip(&records) {
            if let Some(request) = record.active_request {
                return Err(QueueError::AlreadyPending { student: student.clone(), request });
            }
        }
        for (student, record) in students.iter().zip(&records) {
            if record.attempts_used >= self.policy.attempt_budget
                || record.attempts_in(session) >= self.policy.per_session_attempt_cap
            {
                return Err(QueueError::BudgetExhausted { student: student.clone() });
            }
        }
        if let Some(a) = requested.iter().find(|a| records.iter().all(|r| r.passed.contains(a))) {
            return Err(QueueError::AlreadyPassed(a.clone()));
        }
        for (student, record) in students.iter().zip(&records) {
            if let Some(a) = requested.iter().find(|a| record.is_locked(a, session)) {
                return Err(QueueError::PushBackLocked { student: student.clone(), achievement: a.clone() });
            }
        }

        // Outstanding failed re-checks are attached first and may crowd out
        // requested achievements. Otherwise an eligible student reserves one
        // slot for a random re-check.
        let mut forced: Vec<Vec<AchievementId>> = Vec::with_capacity(students.len());
        let mut candidates: Vec<Vec<AchievementId>> = Vec::with_capacity(students.len());
        for record in &records {
            let owed: Vec<AchievementId> =
                record.pending_rechecks.iter().filter(|a| !requested.contains(a)).take(cap).cloned().collect();
            let enabled = passed_assignments(&self.catalog, record) >= self.policy.recheck_enable_threshold
                && self.policy.recheck_probability > 0.0;
            let pool = if owed.is_empty() && record.pending_rechecks.is_empty() && enabled {
                record
                    .passed
                    .iter()
                    .filter(|a| !requested.contains(a))
                    .filter(|a| self.catalog.achievement(a).is_some_and(|a| a.context == ExamContext::LabDemonstrable))
                    .cloned()
                    .collect()
            } else {
                Vec::new()
            };
            forced.push(owed);
            candidates.push(pool);
        }

        let reserved = candidates.iter().map(|c| usize::from(!c.is_empty())).max().unwrap_or(0);
        if requested.len() > cap - reserved {
            return Err(QueueError::TooManyAchievements { requested: requested.len(), allowed: cap - reserved });
        }
        let room = forced
            .iter()
            .zip(&candidates)
            .map(|(f, c)| cap - f.len() - usize::from(!c.is_empty()))
            .min()
            .unwrap_or(cap);
        requested.truncate(room);

        let mut rechecks = BTreeMap::new();
        for ((student, owed), pool) in students.iter().zip(forced).zip(candidates) {
            let attached = if !owed.is_empty() {
                owed
            } else if !pool.is_empty() && rng.random::<f64>() < self.policy.recheck_probability {
                vec![pool[rng.random_range(0..pool.len())].clone()]
            } else {
                continue;
            };
            rechecks.insert(student.clone(), attached);
        }

        let request = state.next_request_id();
        self.ledger
            .record(now, Event::Submitted { request, session, students: students.to_vec(), requested, rechecks })?;
        Ok(self.state().requests[&request].clone())
    }

    /// Withdraws a pending request on behalf of one of its students.
    pub fn cancel_request(
        &mut self,
        request: RequestId,
        student: &StudentId,
        now: Timestamp,
    ) -> Result<RequestRecord, QueueError> {
        let r = self.state().requests.get(&request).ok_or(QueueError::UnknownRequest(request))?;
        if !r.students.contains(student) {
            return Err(QueueError::NotParticipant { student: student.clone(), request });
        }
        if r.state != RequestState::Pending {
            return Err(QueueError::NotPending { request, state: r.state });
        }
        self.ledger.record(now, Event::Cancelled { request, reason: CancelReason::Withdrawn })?;
        Ok(self.state().requests[&request].clone())
    }

    pub fn feed(&self, now: Timestamp) -> Vec<FeedEntry> {
        feed(self.state(), now)
    }

    pub fn queue_position(&self, request: RequestId) -> Result<usize, QueueError> {
        queue_position(self.state(), request)
    }

    /// First claim wins; a repeated claim by the same examiner is a no-op.
    pub fn claim(
        &mut self,
        examiner: &ExaminerId,
        request: RequestId,
        now: Timestamp,
    ) -> Result<RequestRecord, QueueError> {
        let state = self.state();
        let r = state.requests.get(&request).ok_or(QueueError::UnknownRequest(request))?;
        match (r.state, &r.claimed_by) {
            (RequestState::Pending, _) => {}
            (RequestState::Claimed, Some(by)) if by == examiner => return Ok(r.clone()),
            (RequestState::Claimed, Some(by)) => return Err(QueueError::AlreadyClaimed { request, by: by.clone() }),
            (state, _) => return Err(QueueError::NotPending { request, state }),
        }
        let in_session = state.sessions.get(&r.session).is_some_and(|s| s.examiners.contains(examiner));
        if !in_session {
            return Err(QueueError::ExaminerNotInSession(examiner.clone()));
        }
        self.ledger.record_all(
            now,
            vec![
                Event::Claimed { request, examiner: examiner.clone() },
                Event::Notified { request, message: format!("picked up by {examiner}") },
            ],
        )?;
        Ok(self.state().requests[&request].clone())
    }

    /// Records that the examiner rejected the pitch. The request stays
    /// claimed; the examiner still enters a sheet.
    pub fn reject_pitch(
        &mut self,
        examiner: &ExaminerId,
        request: RequestId,
        note: Option<String>,
        now: Timestamp,
    ) -> Result<(), QueueError> {
        self.require_claimed(request)?;
        self.ledger.record(now, Event::PitchRejected { request, examiner: examiner.clone(), note })?;
        Ok(())
    }

    fn require_claimed(&self, request: RequestId) -> Result<&RequestRecord, QueueError> {
        let r = self.state().requests.get(&request).ok_or(QueueError::UnknownRequest(request))?;
        if r.state != RequestState::Claimed {
            return Err(QueueError::NotClaimed(request));
        }
        Ok(r)
    }

    /// Grades a claimed request. The sheet must cover exactly the stated
    /// achievements of every participant; anything else rejects the whole
    /// sheet.
    pub fn record_results(
        &mut self,
        request: RequestId,
        sheet: &GradingSheet,
        now: Timestamp,
    ) -> Result<Vec<LogEntry>, QueueError> {
        let r = self.require_claimed(request)?;
        for student in sheet.verdicts.keys() {
            if !r.students.contains(student) {
                return Err(QueueError::InvalidSheet(format!("{student} is not part of request {request}")));
            }
        }

        let mut events = Vec::new();
        for student in &r.students {
            let given = sheet.verdicts.get(student);
            let stated: BTreeSet<&AchievementId> = r.stated_for(student).collect();
            if let Some(extra) = given.and_then(|g| g.keys().find(|a| !stated.contains(a))) {
                return Err(QueueError::InvalidSheet(format!("`{extra}` was not stated for {student}")));
            }
            let rechecks = r.rechecks_for(student);
            for a in r.stated_for(student) {
                let v = given
                    .and_then(|g| g.get(a))
                    .ok_or_else(|| QueueError::InvalidSheet(format!("no verdict for `{a}` ({student})")))?;
                let verdict = match (rechecks.contains(a), v) {
                    (true, SheetVerdict::Pass) => Verdict::RecheckPass,
                    (true, _) => Verdict::RecheckFail,
                    (false, SheetVerdict::Pass) => Verdict::Pass,
                    (false, SheetVerdict::Fail) => Verdict::Fail,
                    (false, SheetVerdict::Pushback) => Verdict::Pushback,
                };
                events.push(Event::Outcome(OutcomeEvent {
                    student: student.clone(),
                    achievement: a.clone(),
                    verdict,
                    request: Some(request),
                    examiner: r.claimed_by.clone(),
                    note: None,
                }));
            }
        }
        events.push(Event::Completed { request });
        Ok(self.ledger.record_all(now, events)?.to_vec())
    }

    pub fn apply_correction(
        &mut self,
        student: StudentId,
        achievement: AchievementId,
        direction: CorrectionDirection,
        note: &str,
        now: Timestamp,
    ) -> Result<LogEntry, QueueError> {
        if !self.catalog.contains(&achievement) {
            return Err(QueueError::UnknownAchievement(achievement));
        }
        Ok(self.ledger.apply_correction(now, student, achievement, direction, note)?.clone())
    }
}
