//! Append-only event ledger.
//!
//! On disk the ledger is newline-delimited JSON, one [`LogEntry`] per line in
//! ascending `seq`. A final line without its terminating newline is a torn
//! write and is rejected on load rather than silently dropped.

mod event;
mod projection;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use event::{CancelReason, Event, LogEntry, OutcomeEvent, Verdict};
pub use projection::{Projection, RequestRecord, RequestState, SessionRecord, StudentRecord, Violation};

use crate::ids::{AchievementId, StudentId, Timestamp};
use projection::Undo;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("entry seq {seq}: {violation}")]
    Invalid { seq: u64, violation: Violation },
    #[error("truncated final line at byte offset {offset} (entry seq {seq})")]
    TruncatedTail { offset: u64, seq: u64 },
    #[error("corrupt line at byte offset {offset} (entry seq {seq}): {message}")]
    Corrupt { offset: u64, seq: u64, message: String },
    #[error("ledger io error: {0}")]
    Io(#[from] std::io::Error),
}

impl LedgerError {
    /// Sequence number of the first entry that could not be accepted.
    pub fn seq(&self) -> Option<u64> {
        match self {
            LedgerError::Invalid { seq, .. }
            | LedgerError::TruncatedTail { seq, .. }
            | LedgerError::Corrupt { seq, .. } => Some(*seq),
            LedgerError::Io(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionDirection {
    Pass,
    Revoke,
}

/// Replays entries from an empty state.
pub fn replay(entries: &[LogEntry]) -> Result<Projection, LedgerError> {
    replay_onto(Projection::default(), entries)
}

/// Continues a replay: `replay(a ++ b) == replay_onto(replay(a), b)`.
pub fn replay_onto(mut state: Projection, entries: &[LogEntry]) -> Result<Projection, LedgerError> {
    for entry in entries {
        state.apply(entry).map_err(|violation| LedgerError::Invalid { seq: entry.seq, violation })?;
    }
    Ok(state)
}

/// Per-student records replayed from `entries`.
pub fn replay_students(entries: &[LogEntry]) -> Result<BTreeMap<StudentId, StudentRecord>, LedgerError> {
    Ok(replay(entries)?.students)
}

pub fn encode_line(entry: &LogEntry) -> String {
    let mut line = serde_json::to_string(entry).expect("log entries serialize");
    line.push('\n');
    line
}

/// Parses a whole ledger file image. Does not replay.
pub fn decode(bytes: &[u8]) -> Result<Vec<LogEntry>, LedgerError> {
    let mut entries: Vec<LogEntry> = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let expected = entries.last().map_or(1, |e| e.seq + 1);
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(LedgerError::TruncatedTail { offset: offset as u64, seq: expected });
        };
        let corrupt = |message: String| LedgerError::Corrupt { offset: offset as u64, seq: expected, message };
        let line = std::str::from_utf8(&rest[..end]).map_err(|e| corrupt(e.to_string()))?;
        let entry: LogEntry = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        if entry.seq != expected {
            return Err(corrupt(format!("expected seq {expected}, found {}", entry.seq)));
        }
        entries.push(entry);
        offset += end + 1;
    }
    Ok(entries)
}

/// The single writer over the event log. Readers take [`Ledger::snapshot`]
/// copies or borrow [`Ledger::state`].
#[derive(Debug, Default)]
pub struct Ledger {
    entries: Vec<LogEntry>,
    state: Projection,
    sink: Option<(PathBuf, File)>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<LogEntry>) -> Result<Self, LedgerError> {
        let state = replay(&entries)?;
        Ok(Self { entries, state, sink: None })
    }

    /// Loads and replays the file at `path` (created if absent); later
    /// appends are written through to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref();
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut ledger = Self::from_entries(decode(&bytes)?)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        ledger.sink = Some((path.to_path_buf(), file));
        Ok(ledger)
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn state(&self) -> &Projection {
        &self.state
    }

    pub fn last_seq(&self) -> u64 {
        self.state.last_seq
    }

    pub fn snapshot(&self) -> (Projection, Vec<LogEntry>) {
        (self.state.clone(), self.entries.clone())
    }

    /// Appends a caller-numbered entry.
    pub fn append(&mut self, entry: LogEntry) -> Result<&LogEntry, LedgerError> {
        self.commit(vec![entry])?;
        Ok(self.entries.last().expect("just appended"))
    }

    /// Numbers and appends one event.
    pub fn record(&mut self, at: Timestamp, event: Event) -> Result<&LogEntry, LedgerError> {
        self.record_all(at, vec![event])?;
        Ok(self.entries.last().expect("just appended"))
    }

    /// Numbers and appends several events atomically: either all land or
    /// none do.
    pub fn record_all(&mut self, at: Timestamp, events: Vec<Event>) -> Result<&[LogEntry], LedgerError> {
        let first = self.last_seq() + 1;
        let batch: Vec<LogEntry> =
            events.into_iter().enumerate().map(|(i, event)| LogEntry { seq: first + i as u64, at, event }).collect();
        let n = batch.len();
        self.commit(batch)?;
        Ok(&self.entries[self.entries.len() - n..])
    }

    fn commit(&mut self, batch: Vec<LogEntry>) -> Result<(), LedgerError> {
        let mut undo = Undo::default();
        for entry in &batch {
            undo.capture(&self.state, entry);
            if let Err(violation) = self.state.apply(entry) {
                undo.restore(&mut self.state);
                return Err(LedgerError::Invalid { seq: entry.seq, violation });
            }
        }
        if let Some((_, file)) = self.sink.as_mut() {
            let text: String = batch.iter().map(encode_line).collect();
            let written = file.metadata().and_then(|m| {
                let before = m.len();
                file.write_all(text.as_bytes()).and_then(|()| file.sync_data()).inspect_err(|_| {
                    // Drop a partial batch so later appends stay line-aligned.
                    let _ = file.set_len(before);
                })
            });
            if let Err(e) = written {
                undo.restore(&mut self.state);
                return Err(e.into());
            }
        }
        self.entries.extend(batch);
        Ok(())
    }

    /// Appends a compensating manual correction; history is never edited.
    pub fn apply_correction(
        &mut self,
        at: Timestamp,
        student: StudentId,
        achievement: AchievementId,
        direction: CorrectionDirection,
        note: impl Into<String>,
    ) -> Result<&LogEntry, LedgerError> {
        let verdict = match direction {
            CorrectionDirection::Pass => Verdict::ManualCorrectionPass,
            CorrectionDirection::Revoke => Verdict::ManualCorrectionRevoke,
        };
        self.record(
            at,
            Event::Outcome(OutcomeEvent {
                student,
                achievement,
                verdict,
                request: None,
                examiner: None,
                note: Some(note.into()),
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::ids::SessionId;

    fn outcome(student: &str, achievement: &str, verdict: Verdict) -> Event {
        Event::Outcome(OutcomeEvent {
            student: student.into(),
            achievement: achievement.into(),
            verdict,
            request: None,
            examiner: None,
            note: None,
        })
    }

    fn at(min: i64) -> Timestamp {
        Timestamp(min * Timestamp::MINUTE)
    }

    #[test]
    fn empty_log_replays_to_nothing() {
        assert!(replay(&[]).unwrap().students.is_empty());
    }

    #[test]
    fn pass_then_recheck_fail_keeps_pass() {
        let mut l = Ledger::in_memory();
        l.record(at(1), outcome("s", "X", Verdict::Pass)).unwrap();
        assert!(l.state().students[&"s".into()].passed.contains(&"X".into()));
        l.record(at(2), outcome("s", "X", Verdict::RecheckFail)).unwrap();
        let rec = &l.state().students[&"s".into()];
        assert!(rec.passed.contains(&"X".into()));
        assert_eq!(rec.pending_rechecks, vec![AchievementId::from("X")]);
        l.record(at(3), outcome("s", "X", Verdict::RecheckPass)).unwrap();
        let rec = &l.state().students[&"s".into()];
        assert_eq!(rec.passed, BTreeSet::from(["X".into()]));
        assert!(rec.pending_rechecks.is_empty());
    }

    #[test]
    fn recheck_of_unpassed_is_rejected() {
        let mut l = Ledger::in_memory();
        let err = l.record(at(1), outcome("s", "X", Verdict::RecheckFail)).unwrap_err();
        assert!(matches!(err, LedgerError::Invalid { seq: 1, violation: Violation::RecheckNotPassed { .. } }));
        assert_eq!(l.last_seq(), 0);
    }

    #[test]
    fn out_of_order_seq_is_rejected() {
        let mut l = Ledger::in_memory();
        let entry = LogEntry { seq: 2, at: at(0), event: outcome("s", "X", Verdict::Pass) };
        assert!(matches!(
            l.append(entry),
            Err(LedgerError::Invalid { violation: Violation::OutOfOrder { expected: 1, got: 2 }, .. })
        ));
    }

    #[test]
    fn corrections() {
        let mut l = Ledger::in_memory();
        l.apply_correction(at(1), "s".into(), "X".into(), CorrectionDirection::Pass, "missed demo").unwrap();
        assert!(l.state().students[&"s".into()].passed.contains(&"X".into()));

        let err = l.apply_correction(at(2), "s".into(), "X".into(), CorrectionDirection::Revoke, "  ").unwrap_err();
        assert!(matches!(err, LedgerError::Invalid { violation: Violation::EmptyCorrectionNote, .. }));

        l.apply_correction(at(3), "s".into(), "X".into(), CorrectionDirection::Revoke, "typo").unwrap();
        assert!(l.state().students[&"s".into()].passed.is_empty());
        let err = l.apply_correction(at(4), "s".into(), "X".into(), CorrectionDirection::Revoke, "again").unwrap_err();
        assert!(matches!(err, LedgerError::Invalid { violation: Violation::RevokeNotPassed { .. }, .. }));

        l.apply_correction(at(5), "s".into(), "X".into(), CorrectionDirection::Pass, "restored").unwrap();
        assert!(l.state().students[&"s".into()].passed.contains(&"X".into()));
        assert_eq!(l.entries().len(), 3);
    }

    #[test]
    fn revoke_clears_pending_recheck() {
        let mut l = Ledger::in_memory();
        l.record(at(1), outcome("s", "X", Verdict::Pass)).unwrap();
        l.record(at(2), outcome("s", "X", Verdict::RecheckFail)).unwrap();
        l.apply_correction(at(3), "s".into(), "X".into(), CorrectionDirection::Revoke, "n").unwrap();
        assert!(l.state().students[&"s".into()].pending_rechecks.is_empty());
    }

    #[test]
    fn batch_is_atomic() {
        let mut l = Ledger::in_memory();
        let err = l.record_all(at(1), vec![outcome("s", "X", Verdict::Pass), outcome("s", "Y", Verdict::RecheckPass)]);
        assert!(matches!(err, Err(LedgerError::Invalid { seq: 2, .. })));
        assert!(l.entries().is_empty());
        assert_eq!(l.state(), &Projection::default());
    }

    #[test]
    fn failed_batch_rolls_back_every_touched_record() {
        let mut l = Ledger::in_memory();
        let session = SessionId(1);
        let examiners = BTreeSet::from(["e".into()]);
        l.record(at(0), Event::SessionOpened { session, opens_at: at(0), closes_at: at(240), examiners }).unwrap();
        l.record(at(1), outcome("a", "X", Verdict::Pass)).unwrap();
        let before = l.state().clone();
        let request = crate::ids::RequestId(1);
        let graded = |student: &str, verdict| {
            let mut e = outcome(student, "Y", verdict);
            if let Event::Outcome(o) = &mut e {
                o.request = Some(request);
                o.examiner = Some("e".into());
            }
            e
        };
        let err = l.record_all(
            at(2),
            vec![
                Event::Submitted {
                    request,
                    session,
                    students: vec!["a".into(), "b".into()],
                    requested: vec!["Y".into()],
                    rechecks: BTreeMap::new(),
                },
                Event::Claimed { request, examiner: "e".into() },
                graded("a", Verdict::Pass),
                graded("b", Verdict::Pushback),
                Event::Completed { request },
                Event::SessionClosed { session },
                outcome("c", "Z", Verdict::Pass),
                outcome("b", "Q", Verdict::RecheckFail),
            ],
        );
        assert!(matches!(err, Err(LedgerError::Invalid { seq: 10, .. })), "{err:?}");
        assert_eq!(l.state(), &before);
        assert_eq!(l.entries().len(), 2);
    }

    #[test]
    fn session_close_requires_open_session() {
        let mut l = Ledger::in_memory();
        let open = Event::SessionOpened {
            session: SessionId(1),
            opens_at: at(0),
            closes_at: at(240),
            examiners: BTreeSet::new(),
        };
        l.record(at(0), open.clone()).unwrap();
        assert!(l.record(at(1), open).is_err());
        l.record(at(240), Event::SessionClosed { session: SessionId(1) }).unwrap();
        assert!(matches!(
            l.record(at(241), Event::SessionClosed { session: SessionId(1) }),
            Err(LedgerError::Invalid { violation: Violation::SessionNotOpen(_), .. })
        ));
    }

    #[test]
    fn decode_detects_truncation() {
        let mut text = String::new();
        text.push_str(&encode_line(&LogEntry { seq: 1, at: at(0), event: outcome("s", "X", Verdict::Pass) }));
        let good = text.len();
        text.push_str(&encode_line(&LogEntry { seq: 2, at: at(1), event: outcome("s", "Y", Verdict::Pass) }));
        assert_eq!(decode(text.as_bytes()).unwrap().len(), 2);

        let torn = &text.as_bytes()[..text.len() - 5];
        match decode(torn) {
            Err(LedgerError::TruncatedTail { offset, seq }) => {
                assert_eq!(offset, good as u64);
                assert_eq!(seq, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        // Complete JSON missing only the newline is still a torn write.
        assert!(matches!(decode(&text.as_bytes()[..text.len() - 1]), Err(LedgerError::TruncatedTail { seq: 2, .. })));
    }

    #[test]
    fn canonical_field_order() {
        let line = encode_line(&LogEntry { seq: 7, at: at(1), event: outcome("s", "X", Verdict::Pass) });
        assert_eq!(
            line,
            "{\"seq\":7,\"at\":60000,\"kind\":\"outcome\",\"student\":\"s\",\"achievement\":\"X\",\"verdict\":\"pass\"}\n"
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.ndjson");
        {
            let mut l = Ledger::open(&path).unwrap();
            l.record(at(1), outcome("s", "X", Verdict::Pass)).unwrap();
            l.record(at(2), outcome("t", "X", Verdict::Fail)).unwrap();
        }
        let reopened = Ledger::open(&path).unwrap();
        assert_eq!(reopened.last_seq(), 2);
        assert_eq!(reopened.state().students[&"t".into()].failures[&"X".into()], 1);
    }
}
