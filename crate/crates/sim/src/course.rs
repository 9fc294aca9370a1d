//! Course-mode model: a closed population of students working through a
//! fixed number of interchangeable achievements across lab sessions.
//!
//! Time unit is minutes. Each student repeats: think, submit up to
//! `per_attempt_cap` achievements, wait for a free examiner, demonstrate.
//! Every demonstrated achievement independently fails with `p_fail`, is
//! pushed back with `p_pushback` (unavailable for the rest of the session)
//! or passes. A student with a failure re-requests after a short delay;
//! otherwise they go back to thinking. Requests still queued when a session
//! ends are rejected; demonstrations in progress run to completion.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::events::{wait_summary, EventList, QueueArea, Tracer};
use crate::{SimError, SimResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CourseConfig {
    pub seed: u64,
    pub servers: u32,
    pub students: u32,
    pub sessions: u32,
    pub session_minutes: f64,
    /// Mean of the exponential think time before a fresh request.
    pub think_minutes_mean: f64,
    /// Mean of the exponential delay before re-requesting after a failure.
    pub rerequest_minutes_mean: f64,
    pub p_fail: f64,
    pub p_pushback: f64,
    pub service_median_minutes: f64,
    pub service_sigma: f64,
    pub achievements: u32,
    pub per_attempt_cap: u32,
    pub attempt_budget: u32,
    pub per_session_attempt_cap: u32,
}

impl Default for CourseConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            servers: 7,
            students: 100,
            sessions: 1,
            session_minutes: 240.0,
            think_minutes_mean: 60.0,
            rerequest_minutes_mean: 15.0,
            p_fail: 0.2,
            p_pushback: 0.05,
            service_median_minutes: 10.0,
            service_sigma: 0.5,
            achievements: 60,
            per_attempt_cap: 4,
            attempt_budget: 30,
            per_session_attempt_cap: 2,
        }
    }
}

impl CourseConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.servers == 0 {
            return bad("servers must be at least 1");
        }
        if self.students == 0 || self.sessions == 0 {
            return bad("students and sessions must be at least 1");
        }
        if !positive(self.session_minutes)
            || !positive(self.think_minutes_mean)
            || !positive(self.rerequest_minutes_mean)
        {
            return bad("session and think/re-request times must be positive");
        }
        if !positive(self.service_median_minutes) || !(self.service_sigma >= 0.0 && self.service_sigma.is_finite()) {
            return bad("service median must be positive and sigma non-negative");
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_fail) || !prob(self.p_pushback) || self.p_fail + self.p_pushback > 1.0 {
            return bad("p_fail and p_pushback must lie in [0,1] and sum to at most 1");
        }
        if self.per_attempt_cap == 0 || self.per_session_attempt_cap == 0 {
            return bad("attempt caps must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Ev {
    SessionStart(u32),
    SessionEnd(u32),
    Submit { student: usize, session: u32 },
    Done { server: usize, student: usize },
}

#[derive(Debug)]
struct Student {
    rng: ChaCha8Rng,
    remaining: u32,
    locked: u32,
    attempts: u32,
    session_attempts: u32,
    in_service: bool,
    /// Draws made at submission, used when the demonstration finishes.
    pending: Option<Draw>,
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    size: u32,
    service: f64,
    failed: u32,
    pushed: u32,
    think: f64,
    rerequest: f64,
}

struct Dists {
    think: Exp<f64>,
    rerequest: Exp<f64>,
    service: LogNormal<f64>,
}

impl Student {
    fn available(&self) -> u32 {
        self.remaining - self.locked
    }

    fn can_submit(&self, cfg: &CourseConfig) -> bool {
        self.available() > 0
            && self.attempts < cfg.attempt_budget
            && self.session_attempts < cfg.per_session_attempt_cap
    }

    /// Fixed number of draws per cycle so streams stay aligned across
    /// configurations that differ only in staffing.
    fn draw(&mut self, cfg: &CourseConfig, d: &Dists) -> Draw {
        let size = self.available().min(cfg.per_attempt_cap);
        let service = d.service.sample(&mut self.rng);
        let (mut failed, mut pushed) = (0, 0);
        for i in 0..cfg.per_attempt_cap {
            let u: f64 = self.rng.random();
            if i < size {
                if u < cfg.p_fail {
                    failed += 1;
                } else if u < cfg.p_fail + cfg.p_pushback {
                    pushed += 1;
                }
            }
        }
        let think = d.think.sample(&mut self.rng);
        let rerequest = d.rerequest.sample(&mut self.rng);
        Draw { size, service, failed, pushed, think, rerequest }
    }
}

pub(crate) fn run(cfg: &CourseConfig, trace: &mut Tracer<'_>) -> SimResult {
    let dists = Dists {
        think: Exp::new(1.0 / cfg.think_minutes_mean).expect("validated"),
        rerequest: Exp::new(1.0 / cfg.rerequest_minutes_mean).expect("validated"),
        service: LogNormal::new(cfg.service_median_minutes.ln(), cfg.service_sigma).expect("validated"),
    };
    let mut students: Vec<Student> = (0..cfg.students)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u64::from(i) + 2);
            Student {
                rng,
                remaining: cfg.achievements,
                locked: 0,
                attempts: 0,
                session_attempts: 0,
                in_service: false,
                pending: None,
            }
        })
        .collect();

    let c = cfg.servers as usize;
    let mut events = EventList::new();
    let mut queue: VecDeque<(f64, usize)> = VecDeque::new();
    let mut busy: Vec<bool> = vec![false; c];
    let mut busy_time = vec![0.0; c];
    let mut area = QueueArea::default();
    let mut waits = Vec::new();
    let (mut generated, mut completed, mut rejected) = (0u64, 0u64, 0u64);
    let mut open = false;
    let mut session = 0;
    let mut now = 0.0;

    // Sessions run back to back on the simulated clock.
    for s in 0..cfg.sessions {
        events.schedule(f64::from(s) * cfg.session_minutes, Ev::SessionStart(s));
        events.schedule(f64::from(s + 1) * cfg.session_minutes, Ev::SessionEnd(s));
    }

    let start_service = |now: f64,
                         server: usize,
                         student: &mut Student,
                         busy_time: &mut [f64],
                         events: &mut EventList<Ev>,
                         id: usize| {
        let service = student.pending.expect("drawn at submit").service;
        busy_time[server] += service;
        events.schedule(now + service, Ev::Done { server, student: id });
    };

    while let Some((t, ev)) = events.pop() {
        if let Ev::Submit { session: s, .. } = ev {
            if !open || s != session {
                // Think time ran past the session end; nothing submitted.
                continue;
            }
        }
        area.advance(t, queue.len());
        now = t;
        match ev {
            Ev::SessionStart(s) => {
                open = true;
                session = s;
                trace.line(now, "session-start", format_args!("session={s}"));
                for (i, st) in students.iter_mut().enumerate() {
                    st.locked = 0;
                    st.session_attempts = 0;
                    // Students still demonstrating carry on from their Done event.
                    if !st.in_service && st.can_submit(cfg) {
                        let d = st.draw(cfg, &dists);
                        st.pending = Some(d);
                        events.schedule(now + d.think, Ev::Submit { student: i, session: s });
                    }
                }
            }
            Ev::SessionEnd(s) => {
                open = false;
                trace.line(now, "session-end", format_args!("session={s} rejected={}", queue.len()));
                for (_, i) in queue.drain(..) {
                    rejected += 1;
                    students[i].pending = None;
                }
            }
            Ev::Submit { student, .. } => {
                generated += 1;
                trace.line(now, "submit", format_args!("student={student}"));
                match busy.iter().position(|b| !b) {
                    Some(server) => {
                        busy[server] = true;
                        students[student].in_service = true;
                        waits.push(0.0);
                        start_service(now, server, &mut students[student], &mut busy_time, &mut events, student);
                    }
                    None => queue.push_back((now, student)),
                }
            }
            Ev::Done { server, student } => {
                completed += 1;
                busy[server] = false;
                let st = &mut students[student];
                let d = st.pending.take().expect("in service");
                st.in_service = false;
                st.attempts += 1;
                st.session_attempts += 1;
                st.remaining -= d.size - d.failed - d.pushed;
                st.locked += d.pushed;
                trace.line(
                    now,
                    "done",
                    format_args!(
                        "server={server} student={student} size={} failed={} pushed={}",
                        d.size, d.failed, d.pushed
                    ),
                );
                if open && st.can_submit(cfg) {
                    let next = st.draw(cfg, &dists);
                    let delay = if d.failed > 0 { next.rerequest } else { next.think };
                    st.pending = Some(next);
                    events.schedule(now + delay, Ev::Submit { student, session });
                }
                if let Some((arrived, next)) = queue.pop_front() {
                    busy[server] = true;
                    students[next].in_service = true;
                    waits.push(now - arrived);
                    start_service(now, server, &mut students[next], &mut busy_time, &mut events, next);
                }
            }
        }
    }

    let elapsed = now.max(f64::from(cfg.sessions) * cfg.session_minutes);
    let (mean_wait, median_wait, p90_wait) = wait_summary(waits);
    SimResult {
        jobs_generated: generated,
        jobs_completed: completed,
        in_system_at_horizon: 0,
        rejected_at_session_end: rejected,
        mean_wait,
        median_wait,
        p90_wait,
        utilization: busy_time.iter().sum::<f64>() / (c as f64 * elapsed),
        per_server_busy: busy_time.iter().map(|b| b / elapsed).collect(),
        mean_queue_length: area.area() / elapsed,
        elapsed,
    }
}
