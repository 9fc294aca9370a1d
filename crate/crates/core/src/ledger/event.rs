use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{AchievementId, ExaminerId, RequestId, SessionId, StudentId, Timestamp};

/// One line of the ledger. Field order here is the canonical on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Event {
    Outcome(OutcomeEvent),
    SessionOpened {
        session: SessionId,
        opens_at: Timestamp,
        closes_at: Timestamp,
        examiners: BTreeSet<ExaminerId>,
    },
    SessionClosed {
        session: SessionId,
    },
    Submitted {
        request: RequestId,
        session: SessionId,
        students: Vec<StudentId>,
        /// The pitch set, shared by every participant.
        requested: Vec<AchievementId>,
        /// Re-checks attached per participant, oldest pending first.
        rechecks: BTreeMap<StudentId, Vec<AchievementId>>,
    },
    Claimed {
        request: RequestId,
        examiner: ExaminerId,
    },
    /// Tells the participants who picked up their request.
    Notified {
        request: RequestId,
        message: String,
    },
    PitchRejected {
        request: RequestId,
        examiner: ExaminerId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    Completed {
        request: RequestId,
    },
    Cancelled {
        request: RequestId,
        reason: CancelReason,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CancelReason {
    Withdrawn,
    SessionClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEvent {
    pub student: StudentId,
    pub achievement: AchievementId,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<RequestId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examiner: Option<ExaminerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Pushback,
    RecheckPass,
    RecheckFail,
    ManualCorrectionPass,
    ManualCorrectionRevoke,
}

impl Verdict {
    pub fn is_recheck(self) -> bool {
        matches!(self, Verdict::RecheckPass | Verdict::RecheckFail)
    }

    pub fn is_correction(self) -> bool {
        matches!(self, Verdict::ManualCorrectionPass | Verdict::ManualCorrectionRevoke)
    }

    /// Verdicts an examiner gives on a stated (non re-check) achievement.
    pub fn is_attempt(self) -> bool {
        matches!(self, Verdict::Pass | Verdict::Fail | Verdict::Pushback)
    }
}

impl Event {
    pub fn request(&self) -> Option<RequestId> {
        match self {
            Event::Outcome(o) => o.request,
            Event::Submitted { request, .. }
            | Event::Claimed { request, .. }
            | Event::Notified { request, .. }
            | Event::PitchRejected { request, .. }
            | Event::Completed { request }
            | Event::Cancelled { request, .. } => Some(*request),
            Event::SessionOpened { .. } | Event::SessionClosed { .. } => None,
        }
    }
}
