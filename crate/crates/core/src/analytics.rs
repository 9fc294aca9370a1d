//! Statistics mined from the event log.
//!
//! Waiting time is measured from request submission to grade entry (the
//! `completed` event), so it includes the demonstration itself. The
//! submission-to-claim interval is reported separately as `queue_only`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::catalog::{CourseCatalog, GradeLevel};
use crate::ids::{AchievementId, RequestId, StudentId, Timestamp};
use crate::ledger::{self, Event, LedgerError, LogEntry, Verdict};
use crate::queue::QueuePolicy;
use crate::table;

/// Summary of a set of non-negative durations, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurationStats {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: i64,
    pub p90_ms: i64,
    pub max_ms: i64,
}

/// Nearest-rank percentile of an ascending, non-empty slice.
pub fn nearest_rank(sorted: &[i64], p: f64) -> i64 {
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl DurationStats {
    pub fn from_durations(mut d: Vec<i64>) -> Option<Self> {
        if d.is_empty() {
            return None;
        }
        d.sort_unstable();
        let sum: i128 = d.iter().map(|&x| i128::from(x)).sum();
        Some(Self {
            count: d.len(),
            mean_ms: sum as f64 / d.len() as f64,
            median_ms: nearest_rank(&d, 0.5),
            p90_ms: nearest_rank(&d, 0.9),
            max_ms: *d.last().expect("non-empty"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaitStats {
    /// Completed requests counted.
    pub count: usize,
    /// Submission to grade entry.
    pub total: Option<DurationStats>,
    /// Submission to claim.
    pub queue_only: Option<DurationStats>,
}

#[derive(Default)]
struct RequestTimes {
    submitted: Option<Timestamp>,
    claimed: Option<Timestamp>,
    completed: Option<Timestamp>,
}

/// Waits over completed requests submitted within `[from, to)` (all if
/// `window` is `None`). Cancelled requests never complete and are excluded.
pub fn waiting_times(entries: &[LogEntry], window: Option<(Timestamp, Timestamp)>) -> WaitStats {
    let mut times: BTreeMap<RequestId, RequestTimes> = BTreeMap::new();
    for e in entries {
        let (request, field): (_, fn(&mut RequestTimes) -> &mut Option<Timestamp>) = match &e.event {
            Event::Submitted { request, .. } => (request, |t| &mut t.submitted),
            Event::Claimed { request, .. } => (request, |t| &mut t.claimed),
            Event::Completed { request } => (request, |t| &mut t.completed),
            _ => continue,
        };
        *field(times.entry(*request).or_default()) = Some(e.at);
    }
    let in_window = |t: Timestamp| window.is_none_or(|(from, to)| from <= t && t < to);

    let mut total = Vec::new();
    let mut queue_only = Vec::new();
    for t in times.values() {
        let (Some(sub), Some(done)) = (t.submitted, t.completed) else { continue };
        if !in_window(sub) {
            continue;
        }
        total.push((done - sub).max(0));
        if let Some(claim) = t.claimed {
            queue_only.push((claim - sub).max(0));
        }
    }
    WaitStats {
        count: total.len(),
        total: DurationStats::from_durations(total),
        queue_only: DurationStats::from_durations(queue_only),
    }
}

fn secs(ms: f64) -> String {
    format!("{}", (ms / 1000.0).round() as i64)
}

impl WaitStats {
    pub fn to_table(&self) -> String {
        let row = |name: &str, s: &Option<DurationStats>| -> Vec<String> {
            match s {
                Some(s) => vec![
                    name.into(),
                    s.count.to_string(),
                    secs(s.mean_ms),
                    secs(s.median_ms as f64),
                    secs(s.p90_ms as f64),
                    secs(s.max_ms as f64),
                ],
                None => vec![name.into(), "0".into(), String::new(), String::new(), String::new(), String::new()],
            }
        };
        table::to_string(
            &["metric", "count", "mean_s", "median_s", "p90_s", "max_s"],
            [row("submit_to_grade", &self.total), row("submit_to_claim", &self.queue_only)],
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AchievementStats {
    pub achievement: AchievementId,
    /// `passes + fails + pushbacks`; re-checks are counted separately.
    pub attempts: u32,
    pub passes: u32,
    pub fails: u32,
    pub pushbacks: u32,
    pub recheck_passes: u32,
    pub recheck_fails: u32,
    pub students_passed: usize,
}

/// Per-achievement counters, one row per catalog achievement (in catalog
/// order) followed by any ids that appear only in the log.
pub fn achievement_stats(entries: &[LogEntry], catalog: &CourseCatalog) -> Vec<AchievementStats> {
    let mut rows: BTreeMap<&AchievementId, AchievementStats> = BTreeMap::new();
    let mut passers: BTreeMap<&AchievementId, BTreeSet<&StudentId>> = BTreeMap::new();
    for e in entries {
        let Event::Outcome(o) = &e.event else { continue };
        let row = rows.entry(&o.achievement).or_default();
        match o.verdict {
            Verdict::Pass => {
                row.passes += 1;
                passers.entry(&o.achievement).or_default().insert(&o.student);
            }
            Verdict::Fail => row.fails += 1,
            Verdict::Pushback => row.pushbacks += 1,
            Verdict::RecheckPass => row.recheck_passes += 1,
            Verdict::RecheckFail => row.recheck_fails += 1,
            Verdict::ManualCorrectionPass | Verdict::ManualCorrectionRevoke => {}
        }
    }

    let finish = |id: &AchievementId, rows: &mut BTreeMap<&AchievementId, AchievementStats>| {
        let mut row = rows.remove(id).unwrap_or_default();
        row.achievement = id.clone();
        row.attempts = row.passes + row.fails + row.pushbacks;
        row.students_passed = passers.get(id).map_or(0, BTreeSet::len);
        row
    };
    let mut out: Vec<AchievementStats> = catalog.achievements.iter().map(|a| finish(&a.id, &mut rows)).collect();
    let extra: Vec<AchievementId> = rows.keys().map(|k| (*k).clone()).collect();
    out.extend(extra.iter().map(|id| finish(id, &mut rows)));
    out
}

pub fn achievement_table(rows: &[AchievementStats]) -> String {
    table::to_string(
        &[
            "achievement",
            "attempts",
            "passes",
            "fails",
            "pushbacks",
            "recheck_passes",
            "recheck_fails",
            "students_passed",
        ],
        rows.iter().map(|r| {
            [
                r.achievement.to_string(),
                r.attempts.to_string(),
                r.passes.to_string(),
                r.fails.to_string(),
                r.pushbacks.to_string(),
                r.recheck_passes.to_string(),
                r.recheck_fails.to_string(),
                r.students_passed.to_string(),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressRow {
    pub student: StudentId,
    pub passed: usize,
    pub grade: Option<GradeLevel>,
    pub attainable: Vec<GradeLevel>,
    pub attempts_used: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortProgress {
    pub rows: Vec<ProgressRow>,
    pub mean_passed: f64,
}

/// One row per student seen in the log.
pub fn cohort_progress(
    entries: &[LogEntry],
    catalog: &CourseCatalog,
    policy: &QueuePolicy,
) -> Result<CohortProgress, LedgerError> {
    let students = ledger::replay_students(entries)?;
    let rows: Vec<ProgressRow> = students
        .values()
        .map(|r| {
            let known: BTreeSet<AchievementId> = r.passed.iter().filter(|a| catalog.contains(a)).cloned().collect();
            let left = policy.attempt_budget.saturating_sub(r.attempts_used);
            ProgressRow {
                student: r.student.clone(),
                passed: known.len(),
                grade: catalog.grade_unchecked(&known),
                attainable: catalog.attainable_grades(&known, left, policy.per_attempt_cap),
                attempts_used: r.attempts_used,
            }
        })
        .collect();
    let mean_passed =
        if rows.is_empty() { 0.0 } else { rows.iter().map(|r| r.passed).sum::<usize>() as f64 / rows.len() as f64 };
    Ok(CohortProgress { rows, mean_passed })
}

impl CohortProgress {
    pub fn to_table(&self) -> String {
        let join = |v: &[GradeLevel]| v.iter().map(|g| g.0.as_str()).collect::<Vec<_>>().join(" ");
        table::to_string(
            &["student", "passed", "grade", "attainable", "attempts_used"],
            self.rows.iter().map(|r| {
                [
                    r.student.to_string(),
                    r.passed.to_string(),
                    r.grade.as_ref().map(|g| g.0.clone()).unwrap_or_default(),
                    join(&r.attainable),
                    r.attempts_used.to_string(),
                ]
            }),
        )
    }
}
