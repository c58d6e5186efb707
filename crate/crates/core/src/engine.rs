//! Deterministic event queue with millisecond resolution.
//!
//! Events are totally ordered by `(time_ms, seq)`, where `seq` is assigned at
//! scheduling time. Two events for the same millisecond therefore fire in the
//! order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("cannot schedule an event at {at} ms, clock is already at {now} ms")]
    InThePast { at: u64, now: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<K> {
    pub time_ms: u64,
    pub seq: u64,
    pub kind: K,
}

struct Queued<K>(Event<K>);

impl<K> PartialEq for Queued<K> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time_ms == other.0.time_ms && self.0.seq == other.0.seq
    }
}

impl<K> Eq for Queued<K> {}

impl<K> PartialOrd for Queued<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Queued<K> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time_ms, other.0.seq).cmp(&(self.0.time_ms, self.0.seq))
    }
}

pub struct Scheduler<K> {
    heap: BinaryHeap<Queued<K>>,
    now: u64,
    next_seq: u64,
}

impl<K> Default for Scheduler<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Scheduler<K> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: 0,
            next_seq: 0,
        }
    }

    /// Time of the most recently dispatched event.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues `kind` to fire at `time_ms` and returns its sequence number.
    pub fn schedule(&mut self, time_ms: u64, kind: K) -> Result<u64, EngineError> {
        if time_ms < self.now {
            return Err(EngineError::InThePast {
                at: time_ms,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Queued(Event { time_ms, seq, kind }));
        Ok(seq)
    }

    /// Removes the next event if it is due no later than `t_end`, advancing
    /// the clock to its time.
    pub fn pop_until(&mut self, t_end: u64) -> Option<Event<K>> {
        if self.heap.peek()?.0.time_ms > t_end {
            return None;
        }
        let Queued(event) = self.heap.pop()?;
        self.now = event.time_ms;
        Some(event)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(s: &mut Scheduler<&'static str>, t_end: u64) -> Vec<(u64, &'static str)> {
        std::iter::from_fn(|| s.pop_until(t_end))
            .map(|e| (e.time_ms, e.kind))
            .collect()
    }

    #[test]
    fn equal_times_fire_in_scheduling_order() {
        let mut s = Scheduler::new();
        s.schedule(100, "A").unwrap();
        s.schedule(100, "B").unwrap();
        s.schedule(50, "C").unwrap();
        assert_eq!(drain(&mut s, 1000), vec![(50, "C"), (100, "A"), (100, "B")]);
    }

    #[test]
    fn same_tick_event_runs_after_queued_ones() {
        let mut s = Scheduler::new();
        s.schedule(10, "first").unwrap();
        s.schedule(10, "second").unwrap();
        let e = s.pop_until(10).unwrap();
        assert_eq!(e.kind, "first");
        s.schedule(s.now(), "late").unwrap();
        assert_eq!(drain(&mut s, 10), vec![(10, "second"), (10, "late")]);
    }

    #[test]
    fn past_events_rejected() {
        let mut s = Scheduler::new();
        s.schedule(20, "x").unwrap();
        s.pop_until(20).unwrap();
        assert_eq!(
            s.schedule(19, "y"),
            Err(EngineError::InThePast { at: 19, now: 20 })
        );
    }

    #[test]
    fn pop_respects_horizon() {
        let mut s = Scheduler::new();
        s.schedule(5, "a").unwrap();
        s.schedule(6, "b").unwrap();
        assert_eq!(drain(&mut s, 5), vec![(5, "a")]);
        assert_eq!(s.len(), 1);
        assert_eq!(s.now(), 5);
    }
}
