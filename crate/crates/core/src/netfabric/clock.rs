use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::FabricError;

pub type EventId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fired<E> {
    pub at_ms: u64,
    pub id: EventId,
    pub event: E,
}

struct Pending<E> {
    at_ms: u64,
    id: EventId,
    event: E,
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at_ms, self.id) == (other.at_ms, other.id)
    }
}
impl<E> Eq for Pending<E> {}
impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Pending<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at_ms, self.id).cmp(&(other.at_ms, other.id))
    }
}

/// Millisecond virtual clock with a time-ordered event queue. Events at the
/// same instant fire in insertion order.
pub struct SimClock<E> {
    now: u64,
    next_id: EventId,
    queue: BinaryHeap<Reverse<Pending<E>>>,
}

impl<E> Default for SimClock<E> {
    fn default() -> Self {
        SimClock { now: 0, next_id: 0, queue: BinaryHeap::new() }
    }
}

impl<E> SimClock<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(p)| p.at_ms)
    }

    pub fn schedule(&mut self, at_ms: u64, event: E) -> Result<EventId, FabricError> {
        if at_ms < self.now {
            return Err(FabricError::SchedulingInPast { at_ms, now_ms: self.now });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.queue.push(Reverse(Pending { at_ms, id, event }));
        Ok(id)
    }

    /// Schedules `delay_ms` after now; never fails.
    pub fn schedule_in(&mut self, delay_ms: u64, event: E) -> EventId {
        let at = self.now.saturating_add(delay_ms);
        self.schedule(at, event).expect("future time")
    }

    /// Advances to the earliest pending event and hands it out. `None` means
    /// the simulation is idle.
    pub fn step(&mut self) -> Option<Fired<E>> {
        let Reverse(p) = self.queue.pop()?;
        self.now = p.at_ms;
        Some(Fired { at_ms: p.at_ms, id: p.id, event: p.event })
    }
}
