//! Unidirectional message flows: fragmentation, sequencing, priority bundling,
//! acknowledgement, loss detection and per-flow flow control.

mod recv;
mod send;

use std::collections::BTreeMap;

use crate::netsim::SimTime;
use crate::wire::{DataChunk, Fragment};

pub use recv::{AckDecision, ChunkOutcome, RecvFlow, RecvFlowStats, MAX_ACK_GAPS};
pub use send::{AckOutcome, ChunkState, OutboundChunk, SendFlow, SendFlowStats, LOSS_REPORT_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub flow_id: u16,
    pub payload: Vec<u8>,
    pub time_critical: bool,
}

/// Splits a message into chunk payloads of at most `max_chunk` bytes.
pub fn fragment(payload: &[u8], max_chunk: usize) -> Vec<(Fragment, Vec<u8>)> {
    assert!(max_chunk > 0);
    assert!(!payload.is_empty(), "messages carry at least one byte");
    let pieces: Vec<&[u8]> = payload.chunks(max_chunk).collect();
    let last = pieces.len() - 1;
    pieces
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let frag = match (i, last) {
                (_, 0) => Fragment::Whole,
                (0, _) => Fragment::First,
                (i, l) if i == l => Fragment::Last,
                _ => Fragment::Middle,
            };
            (frag, p.to_vec())
        })
        .collect()
}

/// Data chunks selected for one packet.
#[derive(Clone, Debug, Default)]
pub struct FilledData {
    pub chunks: Vec<DataChunk>,
    /// (flow id, seq) of chunks that are retransmissions.
    pub retransmitted: Vec<(u16, u32)>,
    /// Sum of the chunks' flight costs, including the header charge.
    pub flight_bytes: u64,
    /// Whether any time-critical flow had eligible data when the packet was filled.
    pub time_critical_eligible: bool,
}

impl FilledData {
    pub fn wire_len(&self) -> usize {
        self.chunks
            .iter()
            .map(|c| crate::wire::CHUNK_HEADER + c.payload.len())
            .sum()
    }
}

/// A session's outgoing flows plus the bundler state shared between them.
#[derive(Clone, Debug, Default)]
pub struct SendFlows {
    flows: BTreeMap<u16, SendFlow>,
    rr_cursor: usize,
    tx_counter: u64,
}

impl SendFlows {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: u16) -> Option<&SendFlow> {
        self.flows.get(&id)
    }

    pub fn get_mut(&mut self, id: u16) -> Option<&mut SendFlow> {
        self.flows.get_mut(&id)
    }

    pub fn get_or_insert(&mut self, id: u16, time_critical: bool, peer_adv: u64) -> &mut SendFlow {
        self.flows
            .entry(id)
            .or_insert_with(|| SendFlow::new(id, time_critical, peer_adv))
    }

    pub fn iter(&self) -> impl Iterator<Item = &SendFlow> {
        self.flows.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut SendFlow> {
        self.flows.values_mut()
    }

    pub fn has_time_critical_data(&self) -> bool {
        self.flows.values().any(|f| f.time_critical() && f.has_data())
    }

    pub fn has_in_flight(&self) -> bool {
        self.flows.values().any(|f| f.in_flight_chunks() > 0)
    }

    pub fn has_sendable(&self) -> bool {
        self.flows.values().any(SendFlow::has_sendable)
    }

    /// Bundles chunks into at most `budget` bytes of chunk space.
    ///
    /// Time-critical flows have absolute priority: while any of them has an
    /// eligible chunk, normal flows are not considered. Within the chosen
    /// class, retransmissions go first, then new chunks, taking one chunk per
    /// flow per round-robin pass. `header_charge` is added to the flight cost
    /// of the first chunk so packet headers count against the window.
    pub fn fill_packet(&mut self, budget: usize, header_charge: u64, now: SimTime) -> Option<FilledData> {
        let tc_eligible = self.flows.values().any(|f| f.time_critical() && f.has_sendable());
        let class: Vec<u16> = self
            .flows
            .values()
            .filter(|f| !tc_eligible || f.time_critical())
            .map(SendFlow::flow_id)
            .collect();
        if class.is_empty() {
            return None;
        }
        let start = self.rr_cursor % class.len();
        let order: Vec<u16> = class[start..].iter().chain(&class[..start]).copied().collect();

        let mut filled = FilledData {
            time_critical_eligible: tc_eligible,
            ..Default::default()
        };
        let mut remaining = budget;
        for retransmit in [true, false] {
            loop {
                let mut progressed = false;
                for id in &order {
                    let flow = self.flows.get_mut(id).expect("flow in class");
                    let len = if retransmit {
                        flow.retransmit_len()
                    } else {
                        flow.new_chunk_len()
                    };
                    let Some(len) = len.filter(|&l| l <= remaining) else {
                        continue;
                    };
                    let extra = if filled.chunks.is_empty() { header_charge } else { 0 };
                    self.tx_counter += 1;
                    let chunk = if retransmit {
                        flow.take_retransmit(now, self.tx_counter, extra)
                    } else {
                        flow.take_new(now, self.tx_counter, extra)
                    }
                    .expect("length check implies availability");
                    filled.flight_bytes += (len as u64) + extra;
                    if retransmit {
                        filled.retransmitted.push((chunk.flow_id, chunk.seq));
                    }
                    remaining -= len;
                    filled.chunks.push(chunk);
                    progressed = true;
                }
                if !progressed {
                    break;
                }
            }
        }
        self.rr_cursor = self.rr_cursor.wrapping_add(1);
        if filled.chunks.is_empty() {
            None
        } else {
            Some(filled)
        }
    }
}
