use std::collections::{BTreeSet, VecDeque};

use super::{Datagram, NodeId, SimRng, SimTime};

pub const DEFAULT_MTU: usize = 1500;
pub const DEFAULT_QUEUE_CAPACITY: usize = 64 * 1024;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkParams {
    pub bandwidth_bps: u64,
    pub delay: SimTime,
    /// Tail-drop limit on bytes waiting for or undergoing serialization.
    pub queue_capacity: usize,
    pub loss_rate: f64,
    pub mtu: usize,
}

impl LinkParams {
    pub fn new(bandwidth_bps: u64, delay: SimTime) -> Self {
        LinkParams {
            bandwidth_bps,
            delay,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            loss_rate: 0.0,
            mtu: DEFAULT_MTU,
        }
    }

    pub fn with_queue(mut self, bytes: usize) -> Self {
        self.queue_capacity = bytes;
        self
    }

    pub fn with_loss(mut self, rate: f64) -> Self {
        self.loss_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.bandwidth_bps == 0 {
            return Err("link bandwidth must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(format!("loss rate {} outside [0, 1]", self.loss_rate));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropCause {
    RandomLoss,
    QueueOverflow,
    Forced,
    Oversize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkOutcome {
    Deliver(SimTime),
    Dropped(DropCause),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_queue: u64,
    pub dropped_forced: u64,
    pub dropped_oversize: u64,
    pub bytes_delivered: u64,
    pub max_backlog_bytes: usize,
}

impl LinkStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_loss + self.dropped_queue + self.dropped_forced + self.dropped_oversize
    }
}

/// Unidirectional FIFO link with a single transmitter.
#[derive(Clone, Debug)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    params: LinkParams,
    busy_until: SimTime,
    // (serialization finish time, size) for every datagram still occupying the queue
    backlog: VecDeque<(SimTime, usize)>,
    backlog_bytes: usize,
    rng: SimRng,
    forced_drops: BTreeSet<u64>,
    in_transit: u64,
    stats: LinkStats,
}

impl Link {
    pub fn new(from: NodeId, to: NodeId, params: LinkParams, rng: SimRng) -> Self {
        Link {
            from,
            to,
            params,
            busy_until: SimTime::ZERO,
            backlog: VecDeque::new(),
            backlog_bytes: 0,
            rng,
            forced_drops: BTreeSet::new(),
            in_transit: 0,
            stats: LinkStats::default(),
        }
    }

    pub fn params(&self) -> &LinkParams {
        &self.params
    }

    pub fn stats(&self) -> &LinkStats {
        &self.stats
    }

    /// Drops the `n`th datagram (1-based) offered to this link.
    pub fn force_drop(&mut self, n: u64) {
        self.forced_drops.insert(n);
    }

    pub fn backlog_bytes(&mut self, now: SimTime) -> usize {
        self.expire(now);
        self.backlog_bytes
    }

    fn expire(&mut self, now: SimTime) {
        while let Some(&(finish, size)) = self.backlog.front() {
            if finish > now {
                break;
            }
            self.backlog.pop_front();
            self.backlog_bytes -= size;
        }
    }

    pub fn send(&mut self, d: &Datagram, now: SimTime) -> LinkOutcome {
        let size = d.payload.len();
        self.stats.sent += 1;
        let index = self.stats.sent;
        // one draw per offered datagram keeps the loss stream aligned across runs
        let lost = self.rng.bernoulli(self.params.loss_rate);

        if size > self.params.mtu {
            self.stats.dropped_oversize += 1;
            return LinkOutcome::Dropped(DropCause::Oversize);
        }
        if self.forced_drops.remove(&index) {
            self.stats.dropped_forced += 1;
            return LinkOutcome::Dropped(DropCause::Forced);
        }
        if lost {
            self.stats.dropped_loss += 1;
            return LinkOutcome::Dropped(DropCause::RandomLoss);
        }
        self.expire(now);
        if self.backlog_bytes + size > self.params.queue_capacity {
            self.stats.dropped_queue += 1;
            return LinkOutcome::Dropped(DropCause::QueueOverflow);
        }

        let start = self.busy_until.max(now);
        let finish = start + SimTime::serialization(size, self.params.bandwidth_bps);
        self.busy_until = finish;
        self.backlog.push_back((finish, size));
        self.backlog_bytes += size;
        self.stats.max_backlog_bytes = self.stats.max_backlog_bytes.max(self.backlog_bytes);
        self.in_transit += 1;
        LinkOutcome::Deliver(finish + self.params.delay)
    }

    /// Called by the owner when a datagram scheduled by `send` reaches the far end.
    pub fn mark_delivered(&mut self, bytes: usize) {
        self.in_transit -= 1;
        self.stats.delivered += 1;
        self.stats.bytes_delivered += bytes as u64;
    }

    pub fn in_transit(&self) -> u64 {
        self.in_transit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::Address;

    fn dgram(size: usize) -> Datagram {
        Datagram {
            src: Address::new(NodeId(0), 1),
            dst: Address::new(NodeId(1), 2),
            payload: vec![0; size],
        }
    }

    fn link(params: LinkParams) -> Link {
        Link::new(NodeId(0), NodeId(1), params, SimRng::new(1))
    }

    #[test]
    fn full_frame_on_ten_megabit() {
        let mut l = link(LinkParams::new(10_000_000, SimTime::ZERO));
        let now = SimTime::from_millis(3);
        assert_eq!(
            l.send(&dgram(1500), now),
            LinkOutcome::Deliver(now + SimTime::from_micros(1200))
        );
    }

    #[test]
    fn propagation_plus_rounded_serialization() {
        let mut l = link(LinkParams::new(1_000_000_000, SimTime::from_millis(50)));
        // 0.8 us of serialization rounds up to a whole microsecond
        assert_eq!(
            l.send(&dgram(100), SimTime::ZERO),
            LinkOutcome::Deliver(SimTime::from_micros(50_001))
        );
    }

    #[test]
    fn total_loss_drops_everything() {
        let mut l = link(LinkParams::new(10_000_000, SimTime::ZERO).with_loss(1.0));
        for _ in 0..100 {
            assert_eq!(
                l.send(&dgram(100), SimTime::ZERO),
                LinkOutcome::Dropped(DropCause::RandomLoss)
            );
        }
    }

    #[test]
    fn serialization_accumulates_fifo() {
        let mut l = link(LinkParams::new(10_000_000, SimTime::from_millis(1)));
        let t: Vec<_> = (0..3).map(|_| l.send(&dgram(1500), SimTime::ZERO)).collect();
        assert_eq!(
            t,
            vec![
                LinkOutcome::Deliver(SimTime::from_micros(2200)),
                LinkOutcome::Deliver(SimTime::from_micros(3400)),
                LinkOutcome::Deliver(SimTime::from_micros(4600)),
            ]
        );
    }

    #[test]
    fn tail_drop_respects_capacity() {
        let mut l = link(LinkParams::new(1_000_000, SimTime::ZERO).with_queue(3000));
        assert!(matches!(l.send(&dgram(1500), SimTime::ZERO), LinkOutcome::Deliver(_)));
        assert!(matches!(l.send(&dgram(1500), SimTime::ZERO), LinkOutcome::Deliver(_)));
        assert_eq!(
            l.send(&dgram(1), SimTime::ZERO),
            LinkOutcome::Dropped(DropCause::QueueOverflow)
        );
        // first frame done after 12 ms frees its bytes
        assert!(matches!(
            l.send(&dgram(1500), SimTime::from_millis(12)),
            LinkOutcome::Deliver(_)
        ));
        assert!(l.stats().max_backlog_bytes <= 3000);
    }

    #[test]
    fn forced_drop_hits_exact_index() {
        let mut l = link(LinkParams::new(10_000_000, SimTime::ZERO));
        l.force_drop(2);
        let r: Vec<_> = (0..3).map(|_| l.send(&dgram(10), SimTime::ZERO)).collect();
        assert!(matches!(r[0], LinkOutcome::Deliver(_)));
        assert_eq!(r[1], LinkOutcome::Dropped(DropCause::Forced));
        assert!(matches!(r[2], LinkOutcome::Deliver(_)));
    }
}
