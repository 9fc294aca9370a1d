//! Phases, sprints, deadlines, derailment flags and burndown/burnup series.
//!
//! Sprint lengths are data. A sprint's soft deadline is its end; its hard
//! deadline is the end of the following sprint (course end for the last one)
//! unless overridden in the schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, CourseCatalog, GradeLevel};
use crate::ids::{AchievementId, StudentId, Timestamp};
use crate::ledger::{LedgerError, LogEntry, Projection};
use crate::table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sprint {
    pub id: String,
    pub start: Timestamp,
    pub end: Timestamp,
    #[serde(default)]
    pub assignments: Vec<AchievementId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_deadline: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    #[serde(default, rename = "sprint")]
    pub sprints: Vec<Sprint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseSchedule {
    pub course_start: Timestamp,
    pub course_end: Timestamp,
    #[serde(default, rename = "phase")]
    pub phases: Vec<Phase>,
}

/// Deadlines resolved for one sprint.
#[derive(Debug, Clone, PartialEq)]
pub struct SprintDeadlines<'a> {
    pub sprint: &'a Sprint,
    pub soft: Timestamp,
    pub hard: Timestamp,
}

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("schedule parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("schedule io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl CourseSchedule {
    pub fn from_toml_str(text: &str) -> Result<Self, PlanningError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlanningError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn sprints(&self) -> impl Iterator<Item = &Sprint> {
        self.phases.iter().flat_map(|p| p.sprints.iter())
    }

    pub fn deadlines(&self) -> Vec<SprintDeadlines<'_>> {
        let sprints: Vec<&Sprint> = self.sprints().collect();
        sprints
            .iter()
            .enumerate()
            .map(|(i, s)| SprintDeadlines {
                sprint: s,
                soft: s.end,
                hard: s.hard_deadline.unwrap_or_else(|| sprints.get(i + 1).map_or(self.course_end, |next| next.end)),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), PlanningError> {
        let bad = |m: String| Err(PlanningError::InvalidSchedule(m));
        if self.course_start >= self.course_end {
            return bad("course must start before it ends".into());
        }
        let mut ids = BTreeSet::new();
        for phase in &self.phases {
            for pair in phase.sprints.windows(2) {
                if pair[0].end != pair[1].start {
                    return bad(format!("sprints `{}` and `{}` are not contiguous", pair[0].id, pair[1].id));
                }
            }
            for s in &phase.sprints {
                if !ids.insert(&s.id) {
                    return bad(format!("duplicate sprint id `{}`", s.id));
                }
                if s.start >= s.end {
                    return bad(format!("sprint `{}` ends before it starts", s.id));
                }
                if s.start < self.course_start || s.end > self.course_end {
                    return bad(format!("sprint `{}` lies outside the course", s.id));
                }
            }
        }
        for d in self.deadlines() {
            if d.soft >= d.hard {
                return bad(format!("sprint `{}`: soft deadline is not before hard deadline", d.sprint.id));
            }
        }
        Ok(())
    }

    pub fn ideal_burndown(&self, total: u32) -> IdealBurndown {
        IdealBurndown { start: self.course_start, end: self.course_end, total }
    }
}

/// Student's own plan for a sprint. Recorded for discussion, never enforced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprintPlan {
    pub student: StudentId,
    pub sprint: String,
    pub planned: BTreeSet<AchievementId>,
}

impl SprintPlan {
    pub fn unknown_achievements<'a>(&'a self, catalog: &'a CourseCatalog) -> impl Iterator<Item = &'a AchievementId> {
        self.planned.iter().filter(|a| !catalog.contains(a))
    }

    /// `(planned achievements passed, planned achievements)`.
    pub fn progress(&self, passed: &BTreeSet<AchievementId>) -> (usize, usize) {
        (self.planned.intersection(passed).count(), self.planned.len())
    }
}

/// Straight line from `(start, total)` to `(end, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealBurndown {
    pub start: Timestamp,
    pub end: Timestamp,
    pub total: u32,
}

impl IdealBurndown {
    /// Clamped to the endpoints outside the course.
    pub fn value_at(&self, t: Timestamp) -> f64 {
        if t <= self.start {
            return f64::from(self.total);
        }
        if t >= self.end {
            return 0.0;
        }
        let span = (self.end - self.start) as f64;
        f64::from(self.total) * (self.end - t) as f64 / span
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub at: Timestamp,
    pub value: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurndownSeries {
    pub target: GradeLevel,
    pub points: Vec<SeriesPoint>,
    pub ideal: IdealBurndown,
}

impl BurndownSeries {
    /// Rows of `series,timestamp,value`; the ideal line as two rows.
    pub fn to_table(&self, series_id: &str) -> String {
        let ideal_id = format!("{series_id}:ideal");
        let rows = self.points.iter().map(|p| [series_id.to_string(), p.at.to_string(), p.value.to_string()]).chain([
            [ideal_id.clone(), self.ideal.start.to_string(), self.ideal.total.to_string()],
            [ideal_id, self.ideal.end.to_string(), "0".to_string()],
        ]);
        table::to_string(&["series", "timestamp", "value"], rows)
    }
}

/// Walks the log, handing the state after each entry to `visit`.
fn walk(entries: &[LogEntry], mut visit: impl FnMut(&LogEntry, &Projection)) -> Result<Projection, LedgerError> {
    let mut state = Projection::default();
    for e in entries {
        state.apply(e).map_err(|violation| LedgerError::Invalid { seq: e.seq, violation })?;
        visit(e, &state);
    }
    Ok(state)
}

fn passed_of<'a>(state: &'a Projection, student: &StudentId) -> Option<&'a BTreeSet<AchievementId>> {
    state.student(student).map(|r| &r.passed)
}

/// Remaining achievements to `target` over time, one point per change,
/// stamped with the time the grade was entered.
pub fn actual_burndown(
    entries: &[LogEntry],
    student: &StudentId,
    target: &GradeLevel,
    catalog: &CourseCatalog,
    schedule: &CourseSchedule,
) -> Result<BurndownSeries, PlanningError> {
    let empty = BTreeSet::new();
    let total = catalog.remaining_for_grade(&empty, target)?.len();
    let mut points = vec![SeriesPoint { at: schedule.course_start, value: total as u32 }];
    let mut last = total;
    walk(entries, |entry, state| {
        let passed = passed_of(state, student).unwrap_or(&empty);
        let remaining = catalog.remaining_for_grade(passed, target).map(|r| r.len()).unwrap_or(last);
        if remaining != last {
            points.push(SeriesPoint { at: entry.at, value: remaining as u32 });
            last = remaining;
        }
    })?;
    Ok(BurndownSeries { target: target.clone(), points, ideal: schedule.ideal_burndown(total as u32) })
}

/// Cumulative catalog achievements passed over time, per student. A manual
/// revoke steps the series down.
pub fn cohort_burnup(
    entries: &[LogEntry],
    catalog: &CourseCatalog,
) -> Result<BTreeMap<StudentId, Vec<SeriesPoint>>, PlanningError> {
    let mut series: BTreeMap<StudentId, Vec<SeriesPoint>> = BTreeMap::new();
    walk(entries, |entry, state| {
        let crate::ledger::Event::Outcome(o) = &entry.event else { return };
        let count = passed_of(state, &o.student).map_or(0, |p| p.iter().filter(|a| catalog.contains(a)).count()) as u32;
        let line = series.entry(o.student.clone()).or_default();
        if line.last().map_or(count > 0, |p| p.value != count) {
            line.push(SeriesPoint { at: entry.at, value: count });
        }
    })?;
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Derailment {
    pub student: StudentId,
    pub sprint: String,
    pub assignment: AchievementId,
    pub hard_deadline: Timestamp,
}

/// Flags every (student, assignment) whose hard deadline is before `now`
/// and which the student has not passed as of `now`.
pub fn derailment_check(
    entries: &[LogEntry],
    schedule: &CourseSchedule,
    now: Timestamp,
) -> Result<Vec<Derailment>, PlanningError> {
    let upto = entries.partition_point(|e| e.at <= now);
    let state = walk(&entries[..upto], |_, _| {})?;
    let mut out = Vec::new();
    for record in state.students.values() {
        for d in schedule.deadlines().into_iter().filter(|d| d.hard < now) {
            for a in d.sprint.assignments.iter().filter(|a| !record.passed.contains(a)) {
                out.push(Derailment {
                    student: record.student.clone(),
                    sprint: d.sprint.id.clone(),
                    assignment: a.clone(),
                    hard_deadline: d.hard,
                });
            }
        }
    }
    Ok(out)
}
