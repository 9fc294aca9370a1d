//! Future-event list and shared bookkeeping.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

/// Pending event ordered by `(time, seq)`; `seq` breaks ties in insertion
/// order so runs are reproducible.
struct Scheduled<E> {
    time: f64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

pub(crate) struct EventList<E> {
    heap: BinaryHeap<Scheduled<E>>,
    next_seq: u64,
}

impl<E> EventList<E> {
    pub fn new() -> Self {
        Self { heap: BinaryHeap::new(), next_seq: 0 }
    }

    pub fn schedule(&mut self, time: f64, event: E) {
        self.heap.push(Scheduled { time, seq: self.next_seq, event });
        self.next_seq += 1;
    }

    pub fn pop(&mut self) -> Option<(f64, E)> {
        self.heap.pop().map(|s| (s.time, s.event))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|s| s.time)
    }
}

/// Time-weighted integral of the queue length.
#[derive(Debug, Default)]
pub(crate) struct QueueArea {
    last: f64,
    area: f64,
}

impl QueueArea {
    pub fn advance(&mut self, now: f64, len: usize) {
        self.area += (now - self.last) * len as f64;
        self.last = now;
    }

    pub fn area(&self) -> f64 {
        self.area
    }
}

pub(crate) struct Tracer<'a> {
    out: Option<&'a mut dyn Write>,
    error: Option<std::io::Error>,
}

impl<'a> Tracer<'a> {
    pub fn new(out: Option<&'a mut dyn Write>) -> Self {
        Self { out, error: None }
    }

    pub fn enabled(&self) -> bool {
        self.out.is_some() && self.error.is_none()
    }

    pub fn line(&mut self, time: f64, kind: &str, detail: std::fmt::Arguments<'_>) {
        if !self.enabled() {
            return;
        }
        if let Some(out) = self.out.as_mut() {
            if let Err(e) = writeln!(out, "{time:.6} {kind} {detail}") {
                self.error = Some(e);
            }
        }
    }

    pub fn finish(self) -> std::io::Result<()> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Nearest-rank percentile over an ascending slice; 0 when empty.
pub(crate) fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub(crate) fn wait_summary(mut waits: Vec<f64>) -> (f64, f64, f64) {
    if waits.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mean = waits.iter().sum::<f64>() / waits.len() as f64;
    waits.sort_by(f64::total_cmp);
    (mean, percentile(&waits, 0.5), percentile(&waits, 0.9))
}
