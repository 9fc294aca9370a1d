//! State replayed from the ledger.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::{Event, LogEntry, OutcomeEvent, Verdict};
use crate::ids::{AchievementId, ExaminerId, RequestId, SessionId, StudentId, Timestamp};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student: StudentId,
    pub passed: BTreeSet<AchievementId>,
    /// Failed re-checks awaiting a successful re-check, oldest first.
    pub pending_rechecks: Vec<AchievementId>,
    pub pushback_locks: BTreeSet<(AchievementId, SessionId)>,
    pub attempts_used: u32,
    pub session_attempts: BTreeMap<SessionId, u32>,
    /// Fail and push-back counts per achievement.
    pub failures: BTreeMap<AchievementId, u32>,
    pub active_request: Option<RequestId>,
}

impl StudentRecord {
    fn new(student: StudentId) -> Self {
        Self { student, ..Default::default() }
    }

    pub fn is_locked(&self, achievement: &AchievementId, session: SessionId) -> bool {
        self.pushback_locks.contains(&(achievement.clone(), session))
    }

    pub fn attempts_in(&self, session: SessionId) -> u32 {
        self.session_attempts.get(&session).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestState {
    Pending,
    Claimed,
    Completed,
    Cancelled,
}

impl RequestState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RequestState::Completed | RequestState::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: RequestId,
    pub session: SessionId,
    pub students: Vec<StudentId>,
    pub requested: Vec<AchievementId>,
    pub rechecks: BTreeMap<StudentId, Vec<AchievementId>>,
    pub state: RequestState,
    pub claimed_by: Option<ExaminerId>,
    pub submitted_at: Timestamp,
    pub claimed_at: Option<Timestamp>,
    pub completed_at: Option<Timestamp>,
    pub cancelled_at: Option<Timestamp>,
    pub notifications: Vec<String>,
    pub graded: BTreeSet<(StudentId, AchievementId)>,
}

impl RequestRecord {
    pub fn rechecks_for(&self, student: &StudentId) -> &[AchievementId] {
        self.rechecks.get(student).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Everything `student` is graded on in this request.
    pub fn stated_for(&self, student: &StudentId) -> impl Iterator<Item = &AchievementId> {
        self.requested.iter().chain(self.rechecks_for(student))
    }

    pub fn stated_count(&self) -> usize {
        self.students.iter().map(|s| self.stated_for(s).count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: SessionId,
    pub opens_at: Timestamp,
    pub closes_at: Timestamp,
    pub examiners: BTreeSet<ExaminerId>,
    pub closed_at: Option<Timestamp>,
}

impl SessionRecord {
    pub fn is_open(&self) -> bool {
        self.closed_at.is_none()
    }
}

/// Why an entry cannot be applied to the current state.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("expected seq {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("re-check of `{achievement}` for {student}, which is not passed")]
    RecheckNotPassed { student: StudentId, achievement: AchievementId },
    #[error("revoke of `{achievement}` for {student}, which is not passed")]
    RevokeNotPassed { student: StudentId, achievement: AchievementId },
    #[error("manual corrections require a non-empty note")]
    EmptyCorrectionNote,
    #[error("manual corrections cannot reference a request")]
    CorrectionWithRequest,
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("request {0} already exists")]
    DuplicateRequest(RequestId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("session {0} already exists")]
    DuplicateSession(SessionId),
    #[error("session {0} is not open")]
    SessionNotOpen(SessionId),
    #[error("session {0} is still open")]
    AnotherSessionOpen(SessionId),
    #[error("session must open before it closes")]
    InvalidSessionWindow,
    #[error("session {session} still has pending request {request}")]
    PendingRequestsRemain { session: SessionId, request: RequestId },
    #[error("a request needs one or two distinct students")]
    InvalidParticipants,
    #[error("request states no achievements")]
    EmptyRequest,
    #[error("{student} already has active request {request}")]
    StudentBusy { student: StudentId, request: RequestId },
    #[error("`{achievement}` is both requested and re-checked for {student}")]
    RecheckOverlap { student: StudentId, achievement: AchievementId },
    #[error("re-checks attached for {0}, who is not a participant")]
    RecheckForOutsider(StudentId),
    #[error("`{achievement}` is push-back locked for {student}")]
    Locked { student: StudentId, achievement: AchievementId },
    #[error("request {request} is {state:?}")]
    WrongRequestState { request: RequestId, state: RequestState },
    #[error("examiner {examiner} does not serve session {session}")]
    ExaminerNotInSession { examiner: ExaminerId, session: SessionId },
    #[error("{student} is not part of request {request}")]
    StudentNotInRequest { student: StudentId, request: RequestId },
    #[error("`{achievement}` was not stated for {student} in request {request}")]
    AchievementNotStated { student: StudentId, achievement: AchievementId, request: RequestId },
    #[error("verdict {verdict:?} does not fit `{achievement}` for {student}")]
    VerdictMismatch { student: StudentId, achievement: AchievementId, verdict: Verdict },
    #[error("`{achievement}` already graded for {student}")]
    AlreadyGraded { student: StudentId, achievement: AchievementId },
    #[error("request {request} has {missing} ungraded achievements")]
    IncompleteGrading { request: RequestId, missing: usize },
}

/// Everything replayed from a ledger prefix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub last_seq: u64,
    pub students: BTreeMap<StudentId, StudentRecord>,
    pub requests: BTreeMap<RequestId, RequestRecord>,
    pub sessions: BTreeMap<SessionId, SessionRecord>,
}

impl Projection {
    /// Canonical serialization: maps are ordered, so identical logs give
    /// identical bytes.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("projection serializes")
    }

    pub fn student(&self, id: &StudentId) -> Option<&StudentRecord> {
        self.students.get(id)
    }

    pub fn open_session(&self) -> Option<&SessionRecord> {
        self.sessions.values().find(|s| s.is_open())
    }

    pub fn next_request_id(&self) -> RequestId {
        RequestId(self.requests.keys().next_back().map_or(1, |r| r.0 + 1))
    }

    pub fn next_session_id(&self) -> SessionId {
        SessionId(self.sessions.keys().next_back().map_or(1, |s| s.0 + 1))
    }

    /// Pending requests in feed order: submission time, then request id.
    pub fn pending(&self) -> Vec<&RequestRecord> {
        let mut out: Vec<_> = self.requests.values().filter(|r| r.state == RequestState::Pending).collect();
        out.sort_by_key(|r| (r.submitted_at, r.id));
        out
    }

    fn request(&self, id: RequestId) -> Result<&RequestRecord, Violation> {
        self.requests.get(&id).ok_or(Violation::UnknownRequest(id))
    }

    fn require_state(&self, id: RequestId, want: RequestState) -> Result<&RequestRecord, Violation> {
        let r = self.request(id)?;
        if r.state != want {
            return Err(Violation::WrongRequestState { request: id, state: r.state });
        }
        Ok(r)
    }

    fn is_passed(&self, student: &StudentId, achievement: &AchievementId) -> bool {
        self.students.get(student).is_some_and(|s| s.passed.contains(achievement))
    }

    fn record_mut(&mut self, student: &StudentId) -> &mut StudentRecord {
        self.students.entry(student.clone()).or_insert_with(|| StudentRecord::new(student.clone()))
    }

    /// Applies one entry, or leaves the state untouched and reports why not.
    pub fn apply(&mut self, entry: &LogEntry) -> Result<(), Violation> {
        let expected = self.last_seq + 1;
        if entry.seq != expected {
            return Err(Violation::OutOfOrder { expected, got: entry.seq });
        }
        self.check(entry)?;
        self.mutate(entry);
        self.last_seq = entry.seq;
        Ok(())
    }

    fn check(&self, entry: &LogEntry) -> Result<(), Violation> {
        match &entry.event {
            Event::Outcome(o) => self.check_outcome(o),
            Event::SessionOpened { session, opens_at, closes_at, .. } => {
                if self.sessions.contains_key(session) {
                    return Err(Violation::DuplicateSession(*session));
                }
                if opens_at >= closes_at {
                    return Err(Violation::InvalidSessionWindow);
                }
                if let Some(open) = self.open_session() {
                    return Err(Violation::AnotherSessionOpen(open.id));
                }
                Ok(())
            }
            Event::SessionClosed { session } => {
                let s = self.sessions.get(session).ok_or(Violation::UnknownSession(*session))?;
                if !s.is_open() {
                    return Err(Violation::SessionNotOpen(*session));
                }
                if let Some(r) =
                    self.requests.values().find(|r| r.session == *session && r.state == RequestState::Pending)
                {
                    return Err(Violation::PendingRequestsRemain { session: *session, request: r.id });
                }
                Ok(())
            }
            Event::Submitted { request, session, students, requested, rechecks } => {
                if self.requests.contains_key(request) {
                    return Err(Violation::DuplicateRequest(*request));
                }
                let s = self.sessions.get(session).ok_or(Violation::UnknownSession(*session))?;
                if !s.is_open() {
                    return Err(Violation::SessionNotOpen(*session));
                }
                let distinct: BTreeSet<_> = students.iter().collect();
                if students.is_empty() || students.len() > 2 || distinct.len() != students.len() {
                    return Err(Violation::InvalidParticipants);
                }
                if requested.is_empty() && rechecks.values().all(Vec::is_empty) {
                    return Err(Violation::EmptyRequest);
                }
                for who in rechecks.keys() {
                    if !distinct.contains(who) {
                        return Err(Violation::RecheckForOutsider(who.clone()));
                    }
                }
                for student in students {
                    let record = self.students.get(student);
                    if let Some(active) = record.and_then(|r| r.active_request) {
                        return Err(Violation::StudentBusy { student: student.clone(), request: active });
                    }
                    let own = rechecks.get(student).map(Vec::as_slice).unwrap_or(&[]);
                    for a in own {
                        if requested.contains(a) {
                            return Err(Violation::RecheckOverlap { student: student.clone(), achievement: a.clone() });
                        }
                        if !self.is_passed(student, a) {
                            return Err(Violation::RecheckNotPassed {
                                student: student.clone(),
                                achievement: a.clone(),
                            });
                        }
                    }
                    if let Some(record) = record {
                        if let Some(a) = requested.iter().find(|a| record.is_locked(a, *session)) {
                            return Err(Violation::Locked { student: student.clone(), achievement: a.clone() });
                        }
                    }
                }
                Ok(())
            }
            Event::Claimed { request, examiner } => {
                let r = self.require_state(*request, RequestState::Pending)?;
                let s = self.sessions.get(&r.session).ok_or(Violation::UnknownSession(r.session))?;
                if !s.examiners.contains(examiner) {
                    return Err(Violation::ExaminerNotInSession { examiner: examiner.clone(), session: r.session });
                }
                Ok(())
            }
            Event::Notified { request, .. } => self.request(*request).map(|_| ()),
            Event::PitchRejected { request, .. } => self.require_state(*request, RequestState::Claimed).map(|_| ()),
            Event::Completed { request } => {
                let r = self.require_state(*request, RequestState::Claimed)?;
                let missing = r.stated_count() - r.graded.len();
                if missing > 0 {
                    return Err(Violation::IncompleteGrading { request: *request, missing });
                }
                Ok(())
            }
            Event::Cancelled { request, .. } => self.require_state(*request, RequestState::Pending).map(|_| ()),
        }
    }

    fn check_outcome(&self, o: &OutcomeEvent) -> Result<(), Violation> {
        if o.verdict.is_correction() {
            if o.note.as_deref().is_none_or(|n| n.trim().is_empty()) {
                return Err(Violation::EmptyCorrectionNote);
            }
            if o.request.is_some() {
                return Err(Violation::CorrectionWithRequest);
            }
        }
        if o.verdict.is_recheck() && !self.is_passed(&o.student, &o.achievement) {
            return Err(Violation::RecheckNotPassed { student: o.student.clone(), achievement: o.achievement.clone() });
        }
        if o.verdict == Verdict::ManualCorrectionRevoke && !self.is_passed(&o.student, &o.achievement) {
            return Err(Violation::RevokeNotPassed { student: o.student.clone(), achievement: o.achievement.clone() });
        }

        let Some(request) = o.request else {
            return Ok(());
        };
        let r = self.require_state(request, RequestState::Claimed)?;
        if !r.students.contains(&o.student) {
            return Err(Violation::StudentNotInRequest { student: o.student.clone(), request });
        }
        let is_recheck = r.rechecks_for(&o.student).contains(&o.achievement);
        let is_requested = r.requested.contains(&o.achievement);
        if !is_recheck && !is_requested {
            return Err(Violation::AchievementNotStated {
                student: o.student.clone(),
                achievement: o.achievement.clone(),
                request,
            });
        }
        if (is_recheck && !o.verdict.is_recheck()) || (is_requested && !o.verdict.is_attempt()) {
            return Err(Violation::VerdictMismatch {
                student: o.student.clone(),
                achievement: o.achievement.clone(),
                verdict: o.verdict,
            });
        }
        if r.graded.contains(&(o.student.clone(), o.achievement.clone())) {
            return Err(Violation::AlreadyGraded { student: o.student.clone(), achievement: o.achievement.clone() });
        }
        Ok(())
    }

    fn mutate(&mut self, entry: &LogEntry) {
        let at = entry.at;
        match &entry.event {
            Event::Outcome(o) => self.mutate_outcome(o),
            Event::SessionOpened { session, opens_at, closes_at, examiners } => {
                self.sessions.insert(
                    *session,
                    SessionRecord {
                        id: *session,
                        opens_at: *opens_at,
                        closes_at: *closes_at,
                        examiners: examiners.clone(),
                        closed_at: None,
                    },
                );
            }
            Event::SessionClosed { session } => {
                if let Some(s) = self.sessions.get_mut(session) {
                    s.closed_at = Some(at);
                }
                for record in self.students.values_mut() {
                    record.pushback_locks.retain(|(_, s)| s != session);
                }
            }
            Event::Submitted { request, session, students, requested, rechecks } => {
                for s in students {
                    self.record_mut(s).active_request = Some(*request);
                }
                self.requests.insert(
                    *request,
                    RequestRecord {
                        id: *request,
                        session: *session,
                        students: students.clone(),
                        requested: requested.clone(),
                        rechecks: rechecks
                            .iter()
                            .filter(|(_, v)| !v.is_empty())
                            .map(|(k, v)| (k.clone(), v.clone()))
                            .collect(),
                        state: RequestState::Pending,
                        claimed_by: None,
                        submitted_at: at,
                        claimed_at: None,
                        completed_at: None,
                        cancelled_at: None,
                        notifications: Vec::new(),
                        graded: BTreeSet::new(),
                    },
                );
            }
            Event::Claimed { request, examiner } => {
                if let Some(r) = self.requests.get_mut(request) {
                    r.state = RequestState::Claimed;
                    r.claimed_by = Some(examiner.clone());
                    r.claimed_at = Some(at);
                }
            }
            Event::Notified { request, message } => {
                if let Some(r) = self.requests.get_mut(request) {
                    r.notifications.push(message.clone());
                }
            }
            Event::PitchRejected { .. } => {}
            Event::Completed { request } => {
                let Some(r) = self.requests.get_mut(request) else { return };
                r.state = RequestState::Completed;
                r.completed_at = Some(at);
                let (session, students) = (r.session, r.students.clone());
                for s in &students {
                    let record = self.record_mut(s);
                    record.attempts_used += 1;
                    *record.session_attempts.entry(session).or_default() += 1;
                    record.active_request = None;
                }
            }
            Event::Cancelled { request, reason: _ } => {
                let Some(r) = self.requests.get_mut(request) else { return };
                r.state = RequestState::Cancelled;
                r.cancelled_at = Some(at);
                for s in r.students.clone() {
                    self.record_mut(&s).active_request = None;
                }
            }
        }
    }

    fn mutate_outcome(&mut self, o: &OutcomeEvent) {
        // Locks only apply to an open session; a close clears them anyway.
        let session = o
            .request
            .and_then(|r| self.requests.get(&r))
            .map(|r| r.session)
            .filter(|s| self.sessions.get(s).is_some_and(SessionRecord::is_open));
        if let Some(r) = o.request.and_then(|r| self.requests.get_mut(&r)) {
            r.graded.insert((o.student.clone(), o.achievement.clone()));
        }
        let record = self.record_mut(&o.student);
        let a = &o.achievement;
        match o.verdict {
            Verdict::Pass | Verdict::ManualCorrectionPass => {
                record.passed.insert(a.clone());
            }
            Verdict::Fail => {
                *record.failures.entry(a.clone()).or_default() += 1;
            }
            Verdict::Pushback => {
                *record.failures.entry(a.clone()).or_default() += 1;
                if let Some(session) = session {
                    record.pushback_locks.insert((a.clone(), session));
                }
            }
            Verdict::RecheckPass => record.pending_rechecks.retain(|p| p != a),
            Verdict::RecheckFail => {
                if !record.pending_rechecks.contains(a) {
                    record.pending_rechecks.push(a.clone());
                }
            }
            Verdict::ManualCorrectionRevoke => {
                record.passed.remove(a);
                record.pending_rechecks.retain(|p| p != a);
            }
        }
    }
}

/// Prior values of whatever a run of entries touched, so a failed batch can
/// be rolled back without cloning the whole projection.
#[derive(Debug, Default)]
pub(crate) struct Undo {
    last_seq: Option<u64>,
    all_students: Option<BTreeMap<StudentId, StudentRecord>>,
    students: BTreeMap<StudentId, Option<StudentRecord>>,
    requests: BTreeMap<RequestId, Option<RequestRecord>>,
    sessions: BTreeMap<SessionId, Option<SessionRecord>>,
}

impl Undo {
    /// Call before applying `entry`; only the first value seen per key is kept.
    pub fn capture(&mut self, state: &Projection, entry: &LogEntry) {
        self.last_seq.get_or_insert(state.last_seq);
        let request = |id: &RequestId, undo: &mut Self| {
            undo.requests.entry(*id).or_insert_with(|| state.requests.get(id).cloned());
        };
        match &entry.event {
            Event::Outcome(o) => {
                self.student(state, &o.student);
                if let Some(r) = &o.request {
                    request(r, self);
                }
            }
            Event::SessionOpened { session, .. } => self.session(state, *session),
            Event::SessionClosed { session } => {
                self.session(state, *session);
                if self.all_students.is_none() {
                    self.all_students = Some(state.students.clone());
                }
            }
            Event::Submitted { request: r, students, .. } => {
                request(r, self);
                for s in students {
                    self.student(state, s);
                }
            }
            Event::Claimed { request: r, .. }
            | Event::Notified { request: r, .. }
            | Event::PitchRejected { request: r, .. } => request(r, self),
            Event::Completed { request: r } | Event::Cancelled { request: r, .. } => {
                request(r, self);
                for s in state.requests.get(r).map(|x| x.students.as_slice()).unwrap_or_default() {
                    self.student(state, s);
                }
            }
        }
    }

    fn student(&mut self, state: &Projection, id: &StudentId) {
        if self.all_students.is_some() {
            return;
        }
        self.students.entry(id.clone()).or_insert_with(|| state.students.get(id).cloned());
    }

    fn session(&mut self, state: &Projection, id: SessionId) {
        self.sessions.entry(id).or_insert_with(|| state.sessions.get(&id).cloned());
    }

    pub fn restore(self, state: &mut Projection) {
        fn put<K: Ord, V>(map: &mut BTreeMap<K, V>, saved: BTreeMap<K, Option<V>>) {
            for (k, v) in saved {
                match v {
                    Some(v) => map.insert(k, v),
                    None => map.remove(&k),
                };
            }
        }
        // Per-student values predate the full copy, so they go on top.
        if let Some(all) = self.all_students {
            state.students = all;
        }
        put(&mut state.students, self.students);
        put(&mut state.requests, self.requests);
        put(&mut state.sessions, self.sessions);
        if let Some(seq) = self.last_seq {
            state.last_seq = seq;
        }
    }
}
