//! HTTP front end and admin CLI for the mastery queue.
//!
//! [`start`] loads the catalog, schedule, tokens and ledger named by a
//! [`ServiceConfig`], replays the ledger, and spawns the single writer.
//! The returned [`Service`] carries the [`axum::Router`]; [`serve`] binds it.

pub mod api;
pub mod auth;
pub mod cli;
pub mod config;
pub mod wire;
pub mod writer;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use mastery_core::catalog::CatalogError;
use mastery_core::ledger::LedgerError;
use mastery_core::planning::{CourseSchedule, PlanningError};
use mastery_core::queue::QueueError;
use mastery_core::{CourseCatalog, Engine, Ledger};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use api::{router, AppState};
pub use auth::{ApiSession, Authenticator, Role, TokenStore};
pub use config::ServiceConfig;
pub use writer::{system_clock, Clock};

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("catalog fails validation: {0}")]
    InvalidCatalog(String),
    #[error("schedule: {0}")]
    Schedule(#[from] PlanningError),
    #[error("token file: {0}")]
    Tokens(#[from] auth::TokenFileError),
    #[error("refusing to start, ledger {path}: {source}")]
    Ledger { path: PathBuf, source: LedgerError },
    #[error("policy: {0}")]
    Policy(#[from] QueueError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

pub struct Service {
    pub state: AppState,
    pub router: axum::Router,
}

/// Loads everything the config names and starts the writer.
pub fn start(cfg: &ServiceConfig, clock: Clock) -> Result<Service, StartError> {
    let catalog = CourseCatalog::load(cfg.catalog_path()?)?;
    let report = catalog.validate();
    if !report.is_ok() {
        let findings: Vec<String> = report.findings.iter().map(ToString::to_string).collect();
        return Err(StartError::InvalidCatalog(findings.join("; ")));
    }
    let schedule = cfg.schedule.as_deref().filter(|p| p.exists()).map(CourseSchedule::load).transpose()?;
    if let Some(s) = &schedule {
        s.validate()?;
    }
    let tokens = TokenStore::load(cfg.tokens_path()?)?;
    let ledger_path = cfg.ledger_path()?;
    let ledger = Ledger::open(ledger_path).map_err(|source| StartError::Ledger { path: ledger_path.into(), source })?;
    let engine = Engine::new(catalog, cfg.policy.clone(), ledger)?;
    let rng = match cfg.recheck_seed {
        Some(seed) => ChaCha8Rng::seed_from_u64(seed),
        None => ChaCha8Rng::from_os_rng(),
    };
    let (writer, _thread) = writer::spawn(writer::WriterSetup {
        engine,
        schedule,
        catalog_path: cfg.catalog.clone(),
        schedule_path: cfg.schedule.clone(),
        rng,
        clock: clock.clone(),
        queue_depth: cfg.write_queue,
    });
    let state = AppState { writer, auth: Arc::new(tokens), clock };
    Ok(Service { router: router(state.clone()), state })
}

/// Runs the server until `shutdown` resolves.
pub async fn serve(cfg: &ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), StartError> {
    let service = start(cfg, system_clock())?;
    let addr = format!("{}:{}", cfg.bind, cfg.port);
    let listener =
        tokio::net::TcpListener::bind(&addr).await.map_err(|source| StartError::Bind { addr: addr.clone(), source })?;
    tracing::info!(%addr, last_seq = service.state.writer.snapshot().state.last_seq, "listening");
    axum::serve(listener, service.router).with_graceful_shutdown(shutdown).await.map_err(StartError::Serve)
}
