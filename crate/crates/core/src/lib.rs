//! Course-operations engine for achievement-based mastery learning.
//!
//! The [`ledger`] is the single source of truth: every demonstration request,
//! verdict and manual correction is an append-only [`ledger::LogEntry`], and all
//! other state (student records, queue contents, burndown series, statistics)
//! is derived by replaying it.

pub mod analytics;
pub mod catalog;
pub mod ids;
pub mod ledger;
pub mod planning;
pub mod queue;
pub mod table;

pub use catalog::{CourseCatalog, GradeLevel};
pub use ids::{AchievementId, ExaminerId, GroupId, RequestId, SessionId, StudentId, Timestamp};
pub use ledger::{Ledger, LogEntry};
pub use queue::{Engine, QueuePolicy};
