use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::events::{wait_summary, EventList, QueueArea, Tracer};
use crate::{SimError, SimResult};

/// M/M/c run stopped either after `jobs` arrivals (then drained) or at time
/// `horizon`. Exactly one must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmcConfig {
    pub seed: u64,
    pub servers: u32,
    pub arrival_rate: f64,
    pub service_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

impl MmcConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if self.servers == 0 {
            return bad("servers must be at least 1");
        }
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return bad("arrival_rate must be positive");
        }
        if !(self.service_rate > 0.0 && self.service_rate.is_finite()) {
            return bad("service_rate must be positive");
        }
        match (self.jobs, self.horizon) {
            (Some(0), _) => return bad("jobs must be at least 1"),
            (Some(_), None) => {}
            (None, Some(h)) if h > 0.0 && h.is_finite() => {}
            (None, Some(_)) => return bad("horizon must be positive"),
            _ => return bad("set exactly one of `jobs` or `horizon`"),
        }
        let capacity = f64::from(self.servers) * self.service_rate;
        if self.arrival_rate >= capacity {
            return Err(SimError::Unstable { arrival_rate: self.arrival_rate, capacity });
        }
        Ok(())
    }
}

enum Ev {
    Arrival,
    Departure { server: usize },
}

pub(crate) fn run(cfg: &MmcConfig, trace: &mut Tracer<'_>) -> SimResult {
    let mut arrivals_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    arrivals_rng.set_stream(0);
    let mut service_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    service_rng.set_stream(1);
    let interarrival = Exp::new(cfg.arrival_rate).expect("validated rate");
    let service = Exp::new(cfg.service_rate).expect("validated rate");

    let c = cfg.servers as usize;
    let horizon = cfg.horizon.unwrap_or(f64::INFINITY);
    let job_limit = cfg.jobs.unwrap_or(u64::MAX);

    let mut events = EventList::new();
    // Queue holds (arrival time, pre-drawn service time).
    let mut queue: VecDeque<(f64, f64)> = VecDeque::new();
    let mut busy_until: Vec<Option<f64>> = vec![None; c];
    let mut busy_time = vec![0.0; c];
    let mut area = QueueArea::default();
    let mut waits = Vec::new();
    let (mut generated, mut completed) = (0u64, 0u64);
    let mut now = 0.0;

    events.schedule(interarrival.sample(&mut arrivals_rng), Ev::Arrival);
    while let Some(t) = events.peek_time() {
        if t > horizon {
            break;
        }
        let (t, ev) = events.pop().expect("peeked");
        area.advance(t, queue.len());
        now = t;
        match ev {
            Ev::Arrival => {
                generated += 1;
                let demand = service.sample(&mut service_rng);
                trace.line(now, "arrival", format_args!("job={generated}"));
                match busy_until.iter().position(Option::is_none) {
                    Some(server) => {
                        waits.push(0.0);
                        busy_until[server] = Some(now + demand);
                        busy_time[server] += demand;
                        events.schedule(now + demand, Ev::Departure { server });
                    }
                    None => queue.push_back((now, demand)),
                }
                if generated < job_limit {
                    events.schedule(now + interarrival.sample(&mut arrivals_rng), Ev::Arrival);
                }
            }
            Ev::Departure { server } => {
                completed += 1;
                busy_until[server] = None;
                trace.line(now, "departure", format_args!("server={server}"));
                if let Some((arrived, demand)) = queue.pop_front() {
                    waits.push(now - arrived);
                    busy_until[server] = Some(now + demand);
                    busy_time[server] += demand;
                    events.schedule(now + demand, Ev::Departure { server });
                }
            }
        }
    }

    let elapsed = if horizon.is_finite() {
        area.advance(horizon, queue.len());
        // Service still running at the horizon only counts up to it.
        for (server, until) in busy_until.iter().enumerate() {
            if let Some(until) = until {
                busy_time[server] -= until - horizon;
            }
        }
        horizon
    } else {
        now
    };

    let in_service = busy_until.iter().filter(|b| b.is_some()).count() as u64;
    let (mean_wait, median_wait, p90_wait) = wait_summary(waits);
    let per_server_busy: Vec<f64> = busy_time.iter().map(|b| b / elapsed).collect();
    SimResult {
        jobs_generated: generated,
        jobs_completed: completed,
        in_system_at_horizon: queue.len() as u64 + in_service,
        rejected_at_session_end: 0,
        mean_wait,
        median_wait,
        p90_wait,
        utilization: busy_time.iter().sum::<f64>() / (c as f64 * elapsed),
        per_server_busy,
        mean_queue_length: area.area() / elapsed,
        elapsed,
    }
}
