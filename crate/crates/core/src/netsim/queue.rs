use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::{NodeId, SimError, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Timer,
    Datagram,
    AppTick,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Timer => "timer",
            EventKind::Datagram => "datagram",
            EventKind::AppTick => "app-tick",
        }
    }
}

#[derive(Debug)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub kind: EventKind,
    pub payload: P,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}
impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

/// Pending-event set ordered by `(fire_at, seq)`, plus the simulation clock.
pub struct EventQueue<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<P>>,
    cancelled: HashSet<u64>,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: NodeId,
        kind: EventKind,
        payload: P,
    ) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduleInPast { now: self.now, fire_at });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event {
            fire_at,
            seq,
            target,
            kind,
            payload,
        }));
        Ok(EventHandle(seq))
    }

    /// Returns true if the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        let pending = self.heap.iter().any(|e| e.0.seq == handle.0);
        pending && self.cancelled.insert(handle.0)
    }

    /// Pops the next live event due at or before `limit`, advancing the clock to it.
    pub fn pop_due(&mut self, limit: SimTime) -> Option<Event<P>> {
        loop {
            let due = matches!(self.heap.peek(), Some(e) if e.0.fire_at <= limit);
            if !due {
                return None;
            }
            let Entry(ev) = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&ev.seq) {
                continue;
            }
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            return Some(ev);
        }
    }

    /// Moves the clock forward without processing anything. Never moves backwards.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Processes every event due at or before `t` in order, then leaves the
    /// clock at `t`. The handler may schedule further events.
    pub fn run_until<F>(&mut self, t: SimTime, mut handler: F) -> Result<usize, SimError>
    where
        F: FnMut(&mut EventQueue<P>, Event<P>) -> Result<(), SimError>,
    {
        if t < self.now {
            return Err(SimError::ScheduleInPast {
                now: self.now,
                fire_at: t,
            });
        }
        let mut processed = 0;
        while let Some(ev) = self.pop_due(t) {
            processed += 1;
            handler(self, ev)?;
        }
        self.advance_to(t);
        Ok(processed)
    }
}
