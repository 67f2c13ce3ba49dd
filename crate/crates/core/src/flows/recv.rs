use std::collections::{BTreeMap, VecDeque};

use crate::wire::{AckChunk, DataChunk, Fragment};

use super::Message;

/// Upper bound on gap ranges carried by one ack chunk.
pub const MAX_ACK_GAPS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChunkOutcome {
    Accepted,
    Duplicate,
    /// Dropped because it would overrun the receive buffer.
    Overflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AckDecision {
    Now,
    /// Arm the delayed-ack timer.
    Delay,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecvFlowStats {
    pub data_packets: u64,
    pub chunks_received: u64,
    pub duplicates: u64,
    pub overflow_discards: u64,
    pub acks_sent: u64,
    pub messages_reassembled: u64,
    pub messages_read: u64,
    pub bytes_read: u64,
}

/// Receiving half of a flow: reorder buffer, reassembly, ack state and the
/// byte-bounded receive buffer that drives flow control.
#[derive(Clone, Debug)]
pub struct RecvFlow {
    flow_id: u16,
    capacity: u64,
    cum_ack: u32,
    ooo: BTreeMap<u32, DataChunk>,
    ooo_bytes: u64,
    partial: Option<(Vec<u8>, bool)>,
    ready: VecDeque<Message>,
    ready_bytes: u64,
    packets_since_ack: u32,
    urgent: bool,
    last_adv: u64,
    stats: RecvFlowStats,
}

impl RecvFlow {
    pub fn new(flow_id: u16, capacity: u64) -> Self {
        RecvFlow {
            flow_id,
            capacity,
            cum_ack: 0,
            ooo: BTreeMap::new(),
            ooo_bytes: 0,
            partial: None,
            ready: VecDeque::new(),
            ready_bytes: 0,
            packets_since_ack: 0,
            urgent: false,
            last_adv: capacity,
            stats: RecvFlowStats::default(),
        }
    }

    pub fn flow_id(&self) -> u16 {
        self.flow_id
    }

    pub fn cum_ack(&self) -> u32 {
        self.cum_ack
    }

    pub fn stats(&self) -> &RecvFlowStats {
        &self.stats
    }

    pub fn occupancy(&self) -> u64 {
        let partial = self.partial.as_ref().map_or(0, |(p, _)| p.len() as u64);
        self.ooo_bytes + partial + self.ready_bytes
    }

    pub fn adv_buffer(&self) -> u64 {
        self.capacity.saturating_sub(self.occupancy())
    }

    pub fn has_gaps(&self) -> bool {
        !self.ooo.is_empty()
    }

    pub fn ready_messages(&self) -> usize {
        self.ready.len()
    }

    pub fn ack_pending(&self) -> bool {
        self.packets_since_ack > 0
    }

    /// Processes one data chunk. The ack decision is taken per packet by [`Self::on_packet_end`].
    pub fn on_data_chunk(&mut self, c: DataChunk) -> ChunkOutcome {
        self.stats.chunks_received += 1;
        if c.seq <= self.cum_ack || self.ooo.contains_key(&c.seq) {
            self.stats.duplicates += 1;
            self.urgent = true;
            return ChunkOutcome::Duplicate;
        }
        let len = c.payload.len() as u64;
        if self.occupancy() + len > self.capacity {
            self.stats.overflow_discards += 1;
            self.urgent = true;
            return ChunkOutcome::Overflow;
        }
        self.ooo_bytes += len;
        self.ooo.insert(c.seq, c);
        while let Some(next) = self.ooo.remove(&(self.cum_ack + 1)) {
            self.ooo_bytes -= next.payload.len() as u64;
            self.cum_ack = next.seq;
            self.reassemble(next);
        }
        ChunkOutcome::Accepted
    }

    fn reassemble(&mut self, c: DataChunk) {
        let complete = match c.frag {
            Fragment::Whole => Some((c.payload, c.time_critical)),
            Fragment::First => {
                self.partial = Some((c.payload, c.time_critical));
                None
            }
            Fragment::Middle => {
                if let Some((buf, _)) = self.partial.as_mut() {
                    buf.extend_from_slice(&c.payload);
                }
                None
            }
            Fragment::Last => self.partial.take().map(|(mut buf, tc)| {
                buf.extend_from_slice(&c.payload);
                (buf, tc)
            }),
        };
        if let Some((payload, time_critical)) = complete {
            self.ready_bytes += payload.len() as u64;
            self.stats.messages_reassembled += 1;
            self.ready.push_back(Message {
                flow_id: self.flow_id,
                payload,
                time_critical,
            });
        }
    }

    /// Called once per received packet that carried data for this flow.
    pub fn on_packet_end(&mut self) -> AckDecision {
        self.stats.data_packets += 1;
        self.packets_since_ack += 1;
        if self.packets_since_ack >= 2 || self.has_gaps() || self.urgent {
            AckDecision::Now
        } else {
            AckDecision::Delay
        }
    }

    pub fn build_ack(&mut self) -> AckChunk {
        let mut gaps: Vec<(u32, u32)> = Vec::new();
        for &seq in self.ooo.keys() {
            match gaps.last_mut() {
                Some((_, end)) if *end + 1 == seq => *end = seq,
                _ => {
                    if gaps.len() == MAX_ACK_GAPS {
                        break;
                    }
                    gaps.push((seq, seq));
                }
            }
        }
        self.packets_since_ack = 0;
        self.urgent = false;
        self.last_adv = self.adv_buffer();
        self.stats.acks_sent += 1;
        AckChunk {
            flow_id: self.flow_id,
            cum_ack: self.cum_ack,
            gaps,
            adv_buffer: self.last_adv.min(u32::MAX as u64) as u32,
        }
    }

    /// Returns complete messages in order, up to `max_bytes` (always at least one if any).
    pub fn app_read(&mut self, max_bytes: usize) -> Vec<Message> {
        let mut out = Vec::new();
        let mut taken = 0usize;
        while let Some(m) = self.ready.front() {
            if !out.is_empty() && taken + m.payload.len() > max_bytes {
                break;
            }
            let m = self.ready.pop_front().expect("front exists");
            taken += m.payload.len();
            self.ready_bytes -= m.payload.len() as u64;
            out.push(m);
        }
        self.stats.messages_read += out.len() as u64;
        self.stats.bytes_read += taken as u64;
        out
    }

    /// True when reading has opened enough buffer that the sender should hear about it now.
    pub fn wants_window_update(&self, min_chunk: u64) -> bool {
        let adv = self.adv_buffer();
        adv > self.last_adv && (self.last_adv < min_chunk || adv - self.last_adv >= self.capacity / 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(seq: u32, frag: Fragment, payload: &[u8]) -> DataChunk {
        DataChunk {
            flow_id: 19,
            seq,
            frag,
            time_critical: false,
            payload: payload.to_vec(),
        }
    }

    fn whole(seq: u32) -> DataChunk {
        chunk(seq, Fragment::Whole, &[seq as u8; 10])
    }

    #[test]
    fn acks_every_second_packet() {
        let mut r = RecvFlow::new(19, 65536);
        r.on_data_chunk(whole(1));
        assert_eq!(r.on_packet_end(), AckDecision::Delay);
        r.on_data_chunk(whole(2));
        assert_eq!(r.on_packet_end(), AckDecision::Now);
        let a = r.build_ack();
        assert_eq!((a.cum_ack, a.gaps.clone()), (2, vec![]));
        assert_eq!(a.adv_buffer, 65536 - 20);
    }

    #[test]
    fn gap_triggers_immediate_ack() {
        let mut r = RecvFlow::new(19, 65536);
        r.on_data_chunk(whole(1));
        assert_eq!(r.on_packet_end(), AckDecision::Delay);
        r.on_data_chunk(whole(3));
        assert_eq!(r.on_packet_end(), AckDecision::Now);
        let a = r.build_ack();
        assert_eq!(a.cum_ack, 1);
        assert_eq!(a.gaps, vec![(3, 3)]);
        r.on_data_chunk(whole(2));
        assert_eq!(r.cum_ack(), 3);
        assert_eq!(r.app_read(usize::MAX).len(), 3);
    }

    #[test]
    fn duplicate_changes_nothing_but_ack_state() {
        let mut r = RecvFlow::new(19, 65536);
        r.on_data_chunk(whole(1));
        r.on_packet_end();
        r.build_ack();
        let before = (r.cum_ack(), r.occupancy(), r.ready_messages());
        assert_eq!(r.on_data_chunk(whole(1)), ChunkOutcome::Duplicate);
        assert_eq!((r.cum_ack(), r.occupancy(), r.ready_messages()), before);
        assert_eq!(r.on_packet_end(), AckDecision::Now);
    }

    #[test]
    fn reassembles_fragments() {
        let mut r = RecvFlow::new(19, 65536);
        r.on_data_chunk(chunk(2, Fragment::Middle, b"bb"));
        r.on_data_chunk(chunk(3, Fragment::Last, b"c"));
        assert_eq!(r.ready_messages(), 0);
        r.on_data_chunk(chunk(1, Fragment::First, b"aa"));
        let msgs = r.app_read(usize::MAX);
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0].payload, b"aabbc");
        assert_eq!(r.occupancy(), 0);
    }

    #[test]
    fn overflow_discarded() {
        let mut r = RecvFlow::new(19, 25);
        assert_eq!(r.on_data_chunk(whole(1)), ChunkOutcome::Accepted);
        assert_eq!(r.on_data_chunk(whole(2)), ChunkOutcome::Accepted);
        assert_eq!(r.on_data_chunk(whole(3)), ChunkOutcome::Overflow);
        assert_eq!(r.adv_buffer(), 5);
        assert!(r.occupancy() <= 25);
        r.app_read(usize::MAX);
        assert_eq!(r.on_data_chunk(whole(3)), ChunkOutcome::Accepted);
    }

    #[test]
    fn reads_in_fifo_order() {
        let mut r = RecvFlow::new(19, 65536);
        assert!(r.app_read(1000).is_empty());
        for s in 1..=3 {
            r.on_data_chunk(whole(s));
        }
        let got: Vec<u8> = r.app_read(usize::MAX).iter().map(|m| m.payload[0]).collect();
        assert_eq!(got, vec![1, 2, 3]);
    }

    #[test]
    fn window_update_after_drain() {
        let mut r = RecvFlow::new(19, 30);
        for s in 1..=3 {
            r.on_data_chunk(whole(s));
        }
        r.on_packet_end();
        let a = r.build_ack();
        assert_eq!(a.adv_buffer, 0);
        assert!(!r.wants_window_update(10));
        r.app_read(usize::MAX);
        assert!(r.wants_window_update(10));
    }

    #[test]
    fn gap_ranges_merge() {
        let mut r = RecvFlow::new(19, 65536);
        for s in [3, 4, 5, 8, 10, 11] {
            r.on_data_chunk(whole(s));
        }
        assert_eq!(r.build_ack().gaps, vec![(3, 5), (8, 8), (10, 11)]);
    }
}
