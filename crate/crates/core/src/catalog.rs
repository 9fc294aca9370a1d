//! Achievement catalog and grade arithmetic.
//!
//! Grades are stratified: a student holds grade `g` only when every
//! achievement at `g` and at every level below it has been passed. Labels are
//! opaque strings; only their position in [`CourseCatalog::levels`] matters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AchievementId, GroupId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradeLevel(pub String);

impl GradeLevel {
    pub fn new(label: impl Into<String>) -> Self {
        Self(label.into())
    }
}

impl fmt::Display for GradeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AchievementKind {
    Regular,
    Assignment,
    Project,
    CodingExam,
}

/// Where an achievement is examined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExamContext {
    LabDemonstrable,
    ExternallyGraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Achievement {
    pub id: AchievementId,
    pub name: String,
    pub group: GroupId,
    pub level: GradeLevel,
    pub kind: AchievementKind,
    pub context: ExamContext,
}

/// Display grouping only; carries no grading semantics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievementGroup {
    pub id: GroupId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseCatalog {
    /// Ascending grade labels, lowest passing grade first.
    #[serde(default = "default_levels")]
    pub levels: Vec<GradeLevel>,
    #[serde(default = "default_credits")]
    pub credits_total: f64,
    #[serde(default = "default_partial_fraction")]
    pub partial_credit_fraction: f64,
    #[serde(default = "default_half")]
    pub partial_assignment_threshold: f64,
    #[serde(default = "default_half")]
    pub partial_achievement_threshold: f64,
    /// Count coding-exam achievements on the assignment side of the partial
    /// credit rule instead of the achievement side.
    #[serde(default)]
    pub coding_exam_counts_as_assignment: bool,
    #[serde(default, rename = "group")]
    pub groups: Vec<AchievementGroup>,
    #[serde(default, rename = "achievement")]
    pub achievements: Vec<Achievement>,
}

fn default_levels() -> Vec<GradeLevel> {
    ["3", "4", "5"].into_iter().map(GradeLevel::new).collect()
}

fn default_credits() -> f64 {
    20.0
}

fn default_partial_fraction() -> f64 {
    0.25
}

fn default_half() -> f64 {
    0.5
}

impl Default for CourseCatalog {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            credits_total: default_credits(),
            partial_credit_fraction: default_partial_fraction(),
            partial_assignment_threshold: default_half(),
            partial_achievement_threshold: default_half(),
            coding_exam_counts_as_assignment: false,
            groups: Vec::new(),
            achievements: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown achievement `{0}`")]
    UnknownAchievement(AchievementId),
    #[error("unknown grade level `{0}`")]
    UnknownLevel(GradeLevel),
    #[error("catalog parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("catalog encode error: {0}")]
    Encode(#[from] toml::ser::Error),
    #[error("catalog io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One violated catalog invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "finding", rename_all = "kebab-case")]
pub enum Finding {
    NoLevels,
    DuplicateLevel { level: GradeLevel },
    DuplicateAchievementId { id: AchievementId },
    DuplicateGroupId { id: GroupId },
    DuplicateGroupName { name: String },
    DanglingGroup { achievement: AchievementId, group: GroupId },
    UnknownLevel { achievement: AchievementId, level: GradeLevel },
    EmptyLowestLevel,
    CodingExamNotExternal { achievement: AchievementId },
    FractionOutOfRange { field: &'static str, value: f64 },
    NonPositiveCredits { value: f64 },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::NoLevels => write!(f, "no grade levels configured"),
            Finding::DuplicateLevel { level } => write!(f, "grade level `{level}` listed twice"),
            Finding::DuplicateAchievementId { id } => write!(f, "duplicate achievement id `{id}`"),
            Finding::DuplicateGroupId { id } => write!(f, "duplicate group id `{id}`"),
            Finding::DuplicateGroupName { name } => write!(f, "duplicate group name `{name}`"),
            Finding::DanglingGroup { achievement, group } => {
                write!(f, "achievement `{achievement}` references unknown group `{group}`")
            }
            Finding::UnknownLevel { achievement, level } => {
                write!(f, "achievement `{achievement}` references unknown level `{level}`")
            }
            Finding::EmptyLowestLevel => write!(f, "no achievements at the lowest grade level"),
            Finding::CodingExamNotExternal { achievement } => {
                write!(f, "coding exam `{achievement}` must be externally graded")
            }
            Finding::FractionOutOfRange { field, value } => {
                write!(f, "`{field}` = {value} is outside [0, 1]")
            }
            Finding::NonPositiveCredits { value } => write!(f, "credits_total = {value} must be positive"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }
}

impl CourseCatalog {
    pub fn from_toml_str(text: &str) -> Result<Self, CatalogError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> Result<String, CatalogError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn achievement(&self, id: &AchievementId) -> Option<&Achievement> {
        self.achievements.iter().find(|a| &a.id == id)
    }

    pub fn contains(&self, id: &AchievementId) -> bool {
        self.achievement(id).is_some()
    }

    pub fn level_rank(&self, level: &GradeLevel) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    pub fn lowest_level(&self) -> Option<&GradeLevel> {
        self.levels.first()
    }

    fn rank_of(&self, achievement: &Achievement) -> usize {
        // Validated catalogs never hit the fallback; unknown levels sort above
        // every configured level so they cannot lower a grade.
        self.level_rank(&achievement.level).unwrap_or(usize::MAX)
    }

    /// Lists every violated catalog invariant.
    pub fn validate(&self) -> ValidationReport {
        let mut findings = Vec::new();

        if self.levels.is_empty() {
            findings.push(Finding::NoLevels);
        }
        let mut seen_levels = BTreeSet::new();
        for level in &self.levels {
            if !seen_levels.insert(level) {
                findings.push(Finding::DuplicateLevel { level: level.clone() });
            }
        }

        let mut group_ids = BTreeSet::new();
        let mut group_names = BTreeSet::new();
        for group in &self.groups {
            if !group_ids.insert(&group.id) {
                findings.push(Finding::DuplicateGroupId { id: group.id.clone() });
            }
            if !group_names.insert(&group.name) {
                findings.push(Finding::DuplicateGroupName { name: group.name.clone() });
            }
        }

        let mut ids = BTreeSet::new();
        for a in &self.achievements {
            if !ids.insert(&a.id) {
                findings.push(Finding::DuplicateAchievementId { id: a.id.clone() });
            }
            if !group_ids.contains(&a.group) {
                findings.push(Finding::DanglingGroup { achievement: a.id.clone(), group: a.group.clone() });
            }
            if self.level_rank(&a.level).is_none() {
                findings.push(Finding::UnknownLevel { achievement: a.id.clone(), level: a.level.clone() });
            }
            if a.kind == AchievementKind::CodingExam && a.context != ExamContext::ExternallyGraded {
                findings.push(Finding::CodingExamNotExternal { achievement: a.id.clone() });
            }
        }

        if let Some(lowest) = self.lowest_level() {
            if !self.achievements.iter().any(|a| &a.level == lowest) {
                findings.push(Finding::EmptyLowestLevel);
            }
        }

        for (field, value) in [
            ("partial_credit_fraction", self.partial_credit_fraction),
            ("partial_assignment_threshold", self.partial_assignment_threshold),
            ("partial_achievement_threshold", self.partial_achievement_threshold),
        ] {
            if !(0.0..=1.0).contains(&value) {
                findings.push(Finding::FractionOutOfRange { field, value });
            }
        }
        if self.credits_total.is_nan() || self.credits_total <= 0.0 {
            findings.push(Finding::NonPositiveCredits { value: self.credits_total });
        }

        ValidationReport { findings }
    }

    fn check_known<'a>(&self, passed: impl IntoIterator<Item = &'a AchievementId>) -> Result<(), CatalogError> {
        for id in passed {
            if !self.contains(id) {
                return Err(CatalogError::UnknownAchievement(id.clone()));
            }
        }
        Ok(())
    }

    /// Highest level whose achievements, together with those of every lower
    /// level, are all passed. `None` while any lowest-level achievement is
    /// missing.
    pub fn compute_grade(&self, passed: &BTreeSet<AchievementId>) -> Result<Option<GradeLevel>, CatalogError> {
        self.check_known(passed)?;
        Ok(self.grade_unchecked(passed))
    }

    pub(crate) fn grade_unchecked(&self, passed: &BTreeSet<AchievementId>) -> Option<GradeLevel> {
        let first_missing = self
            .achievements
            .iter()
            .filter(|a| !passed.contains(&a.id))
            .map(|a| self.rank_of(a))
            .min()
            .unwrap_or(usize::MAX);
        match first_missing.min(self.levels.len()) {
            0 => None,
            n => Some(self.levels[n - 1].clone()),
        }
    }

    /// Achievements at `target` or below that are not yet passed.
    pub fn remaining_for_grade(
        &self,
        passed: &BTreeSet<AchievementId>,
        target: &GradeLevel,
    ) -> Result<BTreeSet<AchievementId>, CatalogError> {
        let rank = self.level_rank(target).ok_or_else(|| CatalogError::UnknownLevel(target.clone()))?;
        Ok(self
            .achievements
            .iter()
            .filter(|a| self.rank_of(a) <= rank && !passed.contains(&a.id))
            .map(|a| a.id.clone())
            .collect())
    }

    /// Grades still reachable given the demonstration capacity left. Only
    /// lab-demonstrable achievements consume capacity; externally graded ones
    /// are assumed schedulable.
    pub fn attainable_grades(
        &self,
        passed: &BTreeSet<AchievementId>,
        remaining_attempts: u32,
        per_attempt_cap: u32,
    ) -> Vec<GradeLevel> {
        let capacity = u64::from(remaining_attempts) * u64::from(per_attempt_cap);
        let mut needed_by_rank = vec![0u64; self.levels.len()];
        for a in &self.achievements {
            if a.context == ExamContext::LabDemonstrable && !passed.contains(&a.id) {
                if let Some(slot) = needed_by_rank.get_mut(self.rank_of(a)) {
                    *slot += 1;
                }
            }
        }
        let mut cumulative = 0;
        self.levels
            .iter()
            .zip(needed_by_rank)
            .filter_map(|(level, n)| {
                cumulative += n;
                (cumulative <= capacity).then(|| level.clone())
            })
            .collect()
    }

    fn counts_as_assignment(&self, a: &Achievement) -> bool {
        match a.kind {
            AchievementKind::Assignment => true,
            AchievementKind::CodingExam => self.coding_exam_counts_as_assignment,
            AchievementKind::Regular | AchievementKind::Project => false,
        }
    }

    /// Credits earned: full credits with any grade, the partial tier when
    /// both the assignment and lowest-level achievement thresholds are met
    /// (project work excluded from both), otherwise zero.
    pub fn partial_credit(&self, passed: &BTreeSet<AchievementId>) -> Result<f64, CatalogError> {
        self.check_known(passed)?;
        if self.grade_unchecked(passed).is_some() {
            return Ok(self.credits_total);
        }
        let lowest = match self.lowest_level() {
            Some(l) => l,
            None => return Ok(0.0),
        };

        let (mut assign_total, mut assign_passed) = (0usize, 0usize);
        let (mut base_total, mut base_passed) = (0usize, 0usize);
        for a in self.achievements.iter().filter(|a| a.kind != AchievementKind::Project) {
            let done = passed.contains(&a.id);
            if self.counts_as_assignment(a) {
                assign_total += 1;
                assign_passed += usize::from(done);
            }
            if &a.level == lowest {
                base_total += 1;
                base_passed += usize::from(done);
            }
        }

        // An empty category imposes no requirement.
        let meets = |done: usize, total: usize, threshold: f64| total == 0 || done as f64 >= threshold * total as f64;
        let qualifies = meets(assign_passed, assign_total, self.partial_assignment_threshold)
            && meets(base_passed, base_total, self.partial_achievement_threshold)
            && (assign_total + base_total) > 0;

        Ok(if qualifies { self.partial_credit_fraction * self.credits_total } else { 0.0 })
    }

    /// Achievements grouped for display, in catalog order within each group.
    pub fn by_group(&self) -> BTreeMap<&GroupId, Vec<&Achievement>> {
        let mut out: BTreeMap<&GroupId, Vec<&Achievement>> = BTreeMap::new();
        for a in &self.achievements {
            out.entry(&a.group).or_default().push(a);
        }
        out
    }
}
