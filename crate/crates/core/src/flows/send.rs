use std::collections::VecDeque;

use crate::netsim::SimTime;
use crate::wire::{AckChunk, DataChunk, Fragment, CHUNK_HEADER};

use super::fragment;

/// Loss reports after which a chunk is declared lost.
pub const LOSS_REPORT_THRESHOLD: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChunkState {
    Queued,
    InFlight,
    Retransmit,
}

#[derive(Clone, Debug)]
pub struct OutboundChunk {
    pub seq: u32,
    pub frag: Fragment,
    pub payload: Vec<u8>,
    pub state: ChunkState,
    pub sent_at: Option<SimTime>,
    /// Global transmission order of the latest (re)send, for loss inference.
    pub tx_order: u64,
    /// Bytes this chunk's latest transmission added to the session's flight size.
    pub wire_cost: u64,
    pub loss_reports: u8,
    pub transmissions: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SendFlowStats {
    pub messages_enqueued: u64,
    pub bytes_enqueued: u64,
    pub chunks_sent: u64,
    pub retransmissions: u64,
    pub loss_reports_received: u64,
    pub losses_detected: u64,
    pub acks_received: u64,
    pub bytes_acked: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AckOutcome {
    /// Payload bytes acknowledged for the first time.
    pub newly_acked_bytes: u64,
    /// Flight-size bytes released by chunks that were still in flight.
    pub acked_flight_bytes: u64,
    pub losses_detected: u32,
    /// Flight-size bytes of chunks just declared lost.
    pub lost_flight_bytes: u64,
    pub rtt_sample: Option<SimTime>,
    pub loss_reports_issued: u32,
    /// Chunks that reached the loss threshold on this ack.
    pub lost_seqs: Vec<(u32, u8)>,
}

/// Sending half of a unidirectional flow.
#[derive(Clone, Debug)]
pub struct SendFlow {
    flow_id: u16,
    time_critical: bool,
    next_seq: u32,
    unsent: VecDeque<OutboundChunk>,
    // sent but unacknowledged, ascending seq
    sent: VecDeque<OutboundChunk>,
    retransmit_pending: usize,
    peer_adv_buffer: u64,
    outstanding: u64,
    unsent_bytes: u64,
    highest_acked_tx: u64,
    probe_allowed: bool,
    stats: SendFlowStats,
}

impl SendFlow {
    pub fn new(flow_id: u16, time_critical: bool, peer_adv_buffer: u64) -> Self {
        SendFlow {
            flow_id,
            time_critical,
            next_seq: 1,
            unsent: VecDeque::new(),
            sent: VecDeque::new(),
            retransmit_pending: 0,
            peer_adv_buffer,
            outstanding: 0,
            unsent_bytes: 0,
            highest_acked_tx: 0,
            probe_allowed: false,
            stats: SendFlowStats::default(),
        }
    }

    pub fn flow_id(&self) -> u16 {
        self.flow_id
    }

    pub fn time_critical(&self) -> bool {
        self.time_critical
    }

    pub fn peer_adv_buffer(&self) -> u64 {
        self.peer_adv_buffer
    }

    /// Payload bytes sent and not yet acknowledged.
    pub fn outstanding(&self) -> u64 {
        self.outstanding
    }

    pub fn unsent_bytes(&self) -> u64 {
        self.unsent_bytes
    }

    /// Everything the application handed over that the peer has not acknowledged.
    pub fn queued_bytes(&self) -> u64 {
        self.unsent_bytes + self.outstanding
    }

    pub fn has_data(&self) -> bool {
        !self.unsent.is_empty() || !self.sent.is_empty()
    }

    pub fn in_flight_chunks(&self) -> usize {
        self.sent.iter().filter(|c| c.state == ChunkState::InFlight).count()
    }

    pub fn stats(&self) -> &SendFlowStats {
        &self.stats
    }

    pub fn next_seq(&self) -> u32 {
        self.next_seq
    }

    /// Splits `payload` into chunks of at most `max_chunk` bytes and queues them.
    pub fn enqueue_message(&mut self, payload: &[u8], max_chunk: usize) -> usize {
        let pieces = fragment(payload, max_chunk);
        let n = pieces.len();
        for (frag, bytes) in pieces {
            self.unsent_bytes += bytes.len() as u64;
            self.unsent.push_back(OutboundChunk {
                seq: self.next_seq,
                frag,
                payload: bytes,
                state: ChunkState::Queued,
                sent_at: None,
                tx_order: 0,
                wire_cost: 0,
                loss_reports: 0,
                transmissions: 0,
            });
            self.next_seq += 1;
        }
        self.stats.messages_enqueued += 1;
        self.stats.bytes_enqueued += payload.len() as u64;
        n
    }

    fn retransmit_index(&self) -> Option<usize> {
        if self.retransmit_pending == 0 {
            return None;
        }
        self.sent.iter().position(|c| c.state == ChunkState::Retransmit)
    }

    /// Encoded size of the next chunk awaiting retransmission.
    pub fn retransmit_len(&self) -> Option<usize> {
        self.retransmit_index()
            .map(|i| CHUNK_HEADER + self.sent[i].payload.len())
    }

    /// Encoded size of the next new chunk, if the peer's advertised buffer admits it.
    pub fn new_chunk_len(&self) -> Option<usize> {
        let head = self.unsent.front()?;
        let len = head.payload.len() as u64;
        if self.outstanding + len <= self.peer_adv_buffer || (self.probe_allowed && self.sent.is_empty()) {
            Some(CHUNK_HEADER + head.payload.len())
        } else {
            None
        }
    }

    pub fn has_sendable(&self) -> bool {
        self.retransmit_pending > 0 || self.new_chunk_len().is_some()
    }

    /// Queued data held back only by the peer's advertised buffer with nothing in flight.
    pub fn window_blocked(&self) -> bool {
        self.sent.is_empty() && !self.unsent.is_empty() && self.new_chunk_len().is_none()
    }

    /// Lets the head chunk bypass the advertised-buffer gate once so the peer re-advertises.
    pub fn allow_probe(&mut self) {
        self.probe_allowed = true;
    }

    fn to_wire(&self, c: &OutboundChunk) -> DataChunk {
        DataChunk {
            flow_id: self.flow_id,
            seq: c.seq,
            frag: c.frag,
            time_critical: self.time_critical,
            payload: c.payload.clone(),
        }
    }

    pub fn take_retransmit(&mut self, now: SimTime, tx_order: u64, extra_cost: u64) -> Option<DataChunk> {
        let i = self.retransmit_index()?;
        let c = &mut self.sent[i];
        c.state = ChunkState::InFlight;
        c.sent_at = Some(now);
        c.tx_order = tx_order;
        c.wire_cost = (CHUNK_HEADER + c.payload.len()) as u64 + extra_cost;
        c.loss_reports = 0;
        c.transmissions += 1;
        self.retransmit_pending -= 1;
        self.stats.retransmissions += 1;
        let c = &self.sent[i];
        Some(self.to_wire(c))
    }

    pub fn take_new(&mut self, now: SimTime, tx_order: u64, extra_cost: u64) -> Option<DataChunk> {
        self.new_chunk_len()?;
        let mut c = self.unsent.pop_front()?;
        let len = c.payload.len() as u64;
        self.unsent_bytes -= len;
        self.outstanding += len;
        self.probe_allowed = false;
        c.state = ChunkState::InFlight;
        c.sent_at = Some(now);
        c.tx_order = tx_order;
        c.wire_cost = CHUNK_HEADER as u64 + len + extra_cost;
        c.transmissions = 1;
        self.stats.chunks_sent += 1;
        let wire = self.to_wire(&c);
        self.sent.push_back(c);
        Some(wire)
    }

    /// Wire cost of the most recently transmitted chunk; used to account packet headers.
    pub fn flight_cost_of(&self, seq: u32) -> Option<u64> {
        self.sent.iter().find(|c| c.seq == seq).map(|c| c.wire_cost)
    }

    pub fn on_ack(&mut self, ack: &AckChunk, now: SimTime) -> AckOutcome {
        let mut out = AckOutcome::default();
        self.stats.acks_received += 1;
        self.peer_adv_buffer = ack.adv_buffer as u64;

        let mut newest_clean: Option<(u64, SimTime)> = None;
        let mut kept = VecDeque::with_capacity(self.sent.len());
        for c in self.sent.drain(..) {
            if !ack.covers(c.seq) {
                kept.push_back(c);
                continue;
            }
            let len = c.payload.len() as u64;
            out.newly_acked_bytes += len;
            self.outstanding -= len;
            match c.state {
                ChunkState::InFlight => out.acked_flight_bytes += c.wire_cost,
                ChunkState::Retransmit => self.retransmit_pending -= 1,
                ChunkState::Queued => unreachable!("queued chunk in sent list"),
            }
            self.highest_acked_tx = self.highest_acked_tx.max(c.tx_order);
            // Karn: only unambiguous samples
            if c.transmissions == 1 && c.state == ChunkState::InFlight {
                if let Some(at) = c.sent_at {
                    if newest_clean.is_none_or(|(tx, _)| c.tx_order > tx) {
                        newest_clean = Some((c.tx_order, at));
                    }
                }
            }
        }
        self.sent = kept;
        out.rtt_sample = newest_clean.map(|(_, at)| now.saturating_sub(at));
        self.stats.bytes_acked += out.newly_acked_bytes;

        let highest = ack.highest();
        for c in self.sent.iter_mut() {
            if c.seq >= highest {
                break;
            }
            // a report only counts if something sent after this chunk got through
            if c.state != ChunkState::InFlight || c.tx_order >= self.highest_acked_tx {
                continue;
            }
            c.loss_reports += 1;
            out.loss_reports_issued += 1;
            if c.loss_reports >= LOSS_REPORT_THRESHOLD {
                c.state = ChunkState::Retransmit;
                self.retransmit_pending += 1;
                out.losses_detected += 1;
                out.lost_flight_bytes += c.wire_cost;
                out.lost_seqs.push((c.seq, c.loss_reports));
            }
        }
        self.stats.loss_reports_received += out.loss_reports_issued as u64;
        self.stats.losses_detected += out.losses_detected as u64;
        out
    }

    /// Retransmission timeout: everything in flight is presumed lost.
    /// Returns the flight bytes released.
    pub fn on_rto(&mut self) -> u64 {
        let mut released = 0;
        for c in self.sent.iter_mut() {
            if c.state == ChunkState::InFlight {
                c.state = ChunkState::Retransmit;
                self.retransmit_pending += 1;
                released += c.wire_cost;
            }
        }
        released
    }
}
