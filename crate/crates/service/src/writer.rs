//! The single ledger writer.
//!
//! All mutations go through one OS thread that owns the [`Engine`]. Handlers
//! hand it commands over a bounded channel and wait for the reply, which is
//! sent only after the events are synced to disk and a fresh [`Snapshot`]
//! is published. Reads never touch the writer.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use mastery_core::ledger::{LogEntry, Projection, RequestState};
use mastery_core::planning::CourseSchedule;
use mastery_core::queue::{GradingSheet, QueueError};
use mastery_core::{CourseCatalog, Engine, ExaminerId, QueuePolicy, RequestId, StudentId, Timestamp};
use parking_lot::RwLock;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot};

use crate::wire::{ApiError, CloseSessionBody, CorrectionBody, OpenSessionBody, RequestView, SubmitBody};

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        let ms = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64);
        Timestamp(ms)
    })
}

/// Consistent read view, replaced wholesale after every mutation.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: Projection,
    pub entries: Arc<Vec<LogEntry>>,
    pub catalog: Arc<CourseCatalog>,
    pub schedule: Option<Arc<CourseSchedule>>,
    pub policy: QueuePolicy,
}

impl Snapshot {
    pub fn request_view(&self, id: RequestId) -> Option<RequestView> {
        let r = self.state.requests.get(&id)?;
        let pending = self.state.pending();
        let position = (r.state == RequestState::Pending).then(|| pending.iter().take_while(|p| p.id != id).count());
        Some(RequestView::new(r, position, pending.len()))
    }
}

#[derive(Debug)]
pub enum Command {
    Submit { student: StudentId, body: SubmitBody },
    Cancel { student: StudentId, request: RequestId },
    Claim { examiner: ExaminerId, request: RequestId },
    RejectPitch { examiner: ExaminerId, request: RequestId, note: Option<String> },
    Results { examiner: ExaminerId, request: RequestId, sheet: GradingSheet },
    Correction(CorrectionBody),
    Catalog(CourseCatalog),
    Schedule(CourseSchedule),
    OpenSession(OpenSessionBody),
    CloseSession(CloseSessionBody),
}

type Reply = Result<Value, ApiError>;

struct Job {
    command: Command,
    reply: oneshot::Sender<Reply>,
}

/// Cheap-to-clone handle used by request handlers.
#[derive(Clone)]
pub struct WriterHandle {
    tx: mpsc::Sender<Job>,
    published: Arc<RwLock<Arc<Snapshot>>>,
}

impl WriterHandle {
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.published.read().clone()
    }

    /// Queues `command`; a full queue is reported as `RETRY_LATER` right away.
    pub async fn send(&self, command: Command) -> Reply {
        let (reply, rx) = oneshot::channel();
        self.tx.try_send(Job { command, reply }).map_err(|e| match e {
            mpsc::error::TrySendError::Full(_) => ApiError::retry_later(),
            mpsc::error::TrySendError::Closed(_) => ApiError::internal("writer stopped"),
        })?;
        rx.await.map_err(|_| ApiError::internal("writer stopped"))?
    }
}

pub struct WriterSetup {
    pub engine: Engine,
    pub schedule: Option<CourseSchedule>,
    pub catalog_path: Option<PathBuf>,
    pub schedule_path: Option<PathBuf>,
    pub rng: ChaCha8Rng,
    pub clock: Clock,
    pub queue_depth: usize,
}

struct Writer {
    engine: Engine,
    schedule: Option<Arc<CourseSchedule>>,
    catalog: Arc<CourseCatalog>,
    catalog_path: Option<PathBuf>,
    schedule_path: Option<PathBuf>,
    rng: ChaCha8Rng,
    clock: Clock,
    entries: Arc<Vec<LogEntry>>,
    published: Arc<RwLock<Arc<Snapshot>>>,
}

/// Starts the writer thread. It stops once every handle is dropped.
pub fn spawn(setup: WriterSetup) -> (WriterHandle, std::thread::JoinHandle<Engine>) {
    let entries = Arc::new(setup.engine.ledger().entries().to_vec());
    let catalog = Arc::new(setup.engine.catalog().clone());
    let schedule = setup.schedule.map(Arc::new);
    let snapshot = Snapshot {
        state: setup.engine.state().clone(),
        entries: entries.clone(),
        catalog: catalog.clone(),
        schedule: schedule.clone(),
        policy: setup.engine.policy().clone(),
    };
    let published = Arc::new(RwLock::new(Arc::new(snapshot)));
    let (tx, mut rx) = mpsc::channel::<Job>(setup.queue_depth.max(1));
    let mut writer = Writer {
        engine: setup.engine,
        schedule,
        catalog,
        catalog_path: setup.catalog_path,
        schedule_path: setup.schedule_path,
        rng: setup.rng,
        clock: setup.clock,
        entries,
        published: published.clone(),
    };
    let thread = std::thread::Builder::new()
        .name("ledger-writer".into())
        .spawn(move || {
            while let Some(job) = rx.blocking_recv() {
                let reply = writer.execute(job.command);
                writer.publish();
                // The caller may have gone away; the write stands regardless.
                let _ = job.reply.send(reply);
            }
            writer.engine
        })
        .expect("spawn writer thread");
    (WriterHandle { tx, published }, thread)
}

impl Writer {
    fn publish(&mut self) {
        let all = self.engine.ledger().entries();
        let seen = self.entries.len();
        if all.len() != seen {
            Arc::make_mut(&mut self.entries).extend_from_slice(&all[seen..]);
        }
        let snapshot = Snapshot {
            state: self.engine.state().clone(),
            entries: self.entries.clone(),
            catalog: self.catalog.clone(),
            schedule: self.schedule.clone(),
            policy: self.engine.policy().clone(),
        };
        *self.published.write() = Arc::new(snapshot);
    }

    fn view(&self, id: RequestId) -> Value {
        let r = &self.engine.state().requests[&id];
        let pending = self.engine.state().pending();
        let position = (r.state == RequestState::Pending).then(|| pending.iter().take_while(|p| p.id != id).count());
        json!(RequestView::new(r, position, pending.len()))
    }

    fn execute(&mut self, command: Command) -> Reply {
        let now = (self.clock)();
        match command {
            Command::Submit { student, body } => {
                let mut students = vec![student];
                students.extend(body.partner);
                let r = self.engine.submit_request(&students, &body.achievements, &mut self.rng, now)?;
                Ok(self.view(r.id))
            }
            Command::Cancel { student, request } => {
                self.engine.cancel_request(request, &student, now)?;
                Ok(self.view(request))
            }
            Command::Claim { examiner, request } => {
                self.engine.claim(&examiner, request, now)?;
                Ok(self.view(request))
            }
            Command::RejectPitch { examiner, request, note } => {
                self.check_claimer(&examiner, request)?;
                self.engine.reject_pitch(&examiner, request, note, now)?;
                Ok(self.view(request))
            }
            Command::Results { examiner, request, sheet } => {
                self.check_claimer(&examiner, request)?;
                let entries = self.engine.record_results(request, &sheet, now)?;
                Ok(json!({ "request": self.view(request), "entries": entries }))
            }
            Command::Correction(c) => {
                let entry = self.engine.apply_correction(c.student, c.achievement, c.direction, &c.note, now)?;
                Ok(json!(entry))
            }
            Command::OpenSession(body) => {
                let closes_at = body.closes_at.unwrap_or(now + 4 * Timestamp::HOUR);
                Ok(json!(self.engine.open_session(now, closes_at, body.examiners)?))
            }
            Command::CloseSession(body) => {
                let session = match body.session {
                    Some(s) => s,
                    None => self.engine.state().open_session().map(|s| s.id).ok_or(QueueError::SessionClosed)?,
                };
                let entries = self.engine.close_session(session, now)?;
                Ok(json!({ "session": self.engine.state().sessions[&session], "entries": entries }))
            }
            Command::Catalog(catalog) => self.replace_catalog(catalog),
            Command::Schedule(schedule) => self.replace_schedule(schedule),
        }
    }

    /// Only the examiner holding a claim may grade or reject it.
    fn check_claimer(&self, examiner: &ExaminerId, request: RequestId) -> Result<(), QueueError> {
        let r = self.engine.state().requests.get(&request).ok_or(QueueError::UnknownRequest(request))?;
        match &r.claimed_by {
            Some(by) if by != examiner && r.state == RequestState::Claimed => {
                Err(QueueError::AlreadyClaimed { request, by: by.clone() })
            }
            _ => Ok(()),
        }
    }

    fn replace_catalog(&mut self, catalog: CourseCatalog) -> Reply {
        let report = catalog.validate();
        if !report.is_ok() {
            let findings: Vec<String> = report.findings.iter().map(ToString::to_string).collect();
            return Err(ApiError::new(
                axum::http::StatusCode::UNPROCESSABLE_ENTITY,
                "INVALID_CATALOG",
                findings.join("; "),
            ));
        }
        if let Some(path) = &self.catalog_path {
            let text = catalog.to_toml_string().map_err(|e| ApiError::internal(e.to_string()))?;
            write_atomically(path, &text).map_err(|e| ApiError::internal(format!("saving catalog: {e}")))?;
        }
        self.engine.set_catalog(catalog.clone());
        self.catalog = Arc::new(catalog);
        Ok(json!({ "achievements": self.catalog.achievements.len() }))
    }

    fn replace_schedule(&mut self, schedule: CourseSchedule) -> Reply {
        schedule.validate().map_err(|e| {
            ApiError::new(axum::http::StatusCode::UNPROCESSABLE_ENTITY, "INVALID_SCHEDULE", e.to_string())
        })?;
        if let Some(path) = &self.schedule_path {
            let text = toml::to_string(&schedule).map_err(|e| ApiError::internal(e.to_string()))?;
            write_atomically(path, &text).map_err(|e| ApiError::internal(format!("saving schedule: {e}")))?;
        }
        let sprints = schedule.sprints().count();
        self.schedule = Some(Arc::new(schedule));
        Ok(json!({ "sprints": sprints }))
    }
}

/// Write to a sibling temp file, sync, then rename over `path`.
fn write_atomically(path: &Path, text: &str) -> std::io::Result<()> {
    use std::io::Write;
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)
}
