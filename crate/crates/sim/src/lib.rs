//! Discrete-event simulation of lab-session demonstration queues.
//!
//! Students are jobs and examiners are servers. Two modes are provided:
//! a plain M/M/c queue, checked against [`erlang_c_wait`], and a course mode
//! where each student cycles through work, request, wait, demonstration and
//! (on failure) a quicker re-request, within budgets and session bounds.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded from the config,
//! with one independent stream per source (arrivals, services, each
//! student). Sampling order within a stream does not depend on the number of
//! servers, so runs that differ only in `servers` use common random numbers.

mod course;
mod erlang;
mod events;
mod mmc;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use course::CourseConfig;
pub use erlang::{erlang_c, erlang_c_wait};
pub use mmc::MmcConfig;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unstable system: arrival rate {arrival_rate} >= capacity {capacity}")]
    Unstable { arrival_rate: f64, capacity: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SimConfig {
    Mmc(MmcConfig),
    Course(CourseConfig),
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            SimConfig::Mmc(c) => c.validate(),
            SimConfig::Course(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub jobs_generated: u64,
    pub jobs_completed: u64,
    pub in_system_at_horizon: u64,
    pub rejected_at_session_end: u64,
    /// Time from arrival to start of service, over jobs that started service.
    pub mean_wait: f64,
    pub median_wait: f64,
    pub p90_wait: f64,
    pub utilization: f64,
    pub per_server_busy: Vec<f64>,
    pub mean_queue_length: f64,
    /// Simulated time covered by the statistics.
    pub elapsed: f64,
}

impl SimResult {
    /// Served jobs per unit time.
    pub fn throughput(&self) -> f64 {
        self.jobs_completed as f64 / self.elapsed
    }

    /// `metric,value` rows.
    pub fn to_table(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut row = |k: &str, v: String| {
            out.push_str(k);
            out.push(',');
            out.push_str(&v);
            out.push('\n');
        };
        row("jobs_generated", self.jobs_generated.to_string());
        row("jobs_completed", self.jobs_completed.to_string());
        row("in_system_at_horizon", self.in_system_at_horizon.to_string());
        row("rejected_at_session_end", self.rejected_at_session_end.to_string());
        row("mean_wait", self.mean_wait.to_string());
        row("median_wait", self.median_wait.to_string());
        row("p90_wait", self.p90_wait.to_string());
        row("utilization", self.utilization.to_string());
        for (i, b) in self.per_server_busy.iter().enumerate() {
            row(&format!("server_{i}_busy"), b.to_string());
        }
        row("mean_queue_length", self.mean_queue_length.to_string());
        row("elapsed", self.elapsed.to_string());
        out
    }
}

pub fn run_sim(config: &SimConfig) -> Result<SimResult, SimError> {
    run_sim_traced(config, None)
}

/// Like [`run_sim`], also writing one line per processed event to `trace`.
pub fn run_sim_traced(config: &SimConfig, trace: Option<&mut dyn Write>) -> Result<SimResult, SimError> {
    config.validate()?;
    let mut tracer = events::Tracer::new(trace);
    let result = match config {
        SimConfig::Mmc(c) => mmc::run(c, &mut tracer),
        SimConfig::Course(c) => course::run(c, &mut tracer),
    };
    tracer.finish()?;
    Ok(result)
}
