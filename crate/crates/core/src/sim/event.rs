use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::data_plane::IoRequest;
use crate::ServerId;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    EpochBoundary,
    ServerTick(ServerId),
    /// A request from workload stream `stream`.
    Arrival { stream: usize, request: IoRequest },
    MetricsFlush,
}

impl EventKind {
    /// Order among events sharing a timestamp: tokens land before service,
    /// service before new arrivals, and flushes see everything.
    fn rank(&self) -> u8 {
        match self {
            EventKind::EpochBoundary => 0,
            EventKind::ServerTick(_) => 1,
            EventKind::Arrival { .. } => 2,
            EventKind::MetricsFlush => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("event at t={time} scheduled in the past (clock is {clock})")]
pub struct TimeTravel {
    pub time: f64,
    pub clock: f64,
}

/// Pending events ordered by (time, kind, seq), plus the simulated clock.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
    clock: f64,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Queues an event and returns its sequence number.
    pub fn schedule(&mut self, time: f64, kind: EventKind) -> Result<u64, TimeTravel> {
        if time < self.clock || time.is_nan() {
            return Err(TimeTravel {
                time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(SimEvent { time, seq, kind }));
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<SimEvent> {
        let Reverse(ev) = self.heap.pop()?;
        debug_assert!(ev.time >= self.clock);
        self.clock = ev.time;
        Some(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_order() {
        let mut q = EventQueue::new();
        q.schedule(2.0, EventKind::MetricsFlush).unwrap();
        q.schedule(1.0, EventKind::MetricsFlush).unwrap();
        assert_eq!(q.pop().unwrap().time, 1.0);
        assert_eq!(q.pop().unwrap().time, 2.0);
        assert!(q.pop().is_none());
    }

    #[test]
    fn equal_times_pop_in_seq_order() {
        let mut q = EventQueue::new();
        let a = q.schedule(1.0, EventKind::ServerTick(ServerId(2))).unwrap();
        let b = q.schedule(1.0, EventKind::ServerTick(ServerId(1))).unwrap();
        assert_eq!(q.pop().unwrap().seq, a);
        assert_eq!(q.pop().unwrap().seq, b);
    }

    #[test]
    fn kind_priority_at_equal_times() {
        let mut q = EventQueue::new();
        q.schedule(1.0, EventKind::MetricsFlush).unwrap();
        q.schedule(1.0, EventKind::ServerTick(ServerId(1))).unwrap();
        q.schedule(1.0, EventKind::EpochBoundary).unwrap();
        let kinds: Vec<u8> = std::iter::from_fn(|| q.pop()).map(|e| e.kind.rank()).collect();
        assert_eq!(kinds, vec![0, 1, 3]);
    }

    #[test]
    fn rejects_time_travel() {
        let mut q = EventQueue::new();
        q.schedule(5.0, EventKind::MetricsFlush).unwrap();
        q.pop();
        assert_eq!(
            q.schedule(4.0, EventKind::MetricsFlush),
            Err(TimeTravel {
                time: 4.0,
                clock: 5.0
            })
        );
        assert!(q.schedule(5.0, EventKind::MetricsFlush).is_ok());
    }
}
