//! Traffic sources and sinks sitting on top of an [`Engine`].
//!
//! An [`App`] is a passive callback target: the simulation loop calls into it
//! on start, on its own scheduled ticks and reads, and on engine notices, and
//! schedules whatever [`AppAction`]s come back.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{AppId, AppNotice, Engine, EngineError, Epd, SessionHandle};
use crate::netsim::{Address, Dist, SimRng, SimTime};

/// Message sizes are clamped into this range.
pub const MIN_MESSAGE: usize = 1;
pub const MAX_MESSAGE: usize = 64 * 1024;

/// Width of the delivery histogram kept for every receive flow.
pub const BIN_WIDTH: SimTime = SimTime::from_millis(100);

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub flow_id: u16,
    pub packet_size: Dist,
    pub send_interval: Dist,
    pub num_packets: u64,
    pub time_critical: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemoteSpec {
    pub host: String,
    pub port: u16,
    pub epd: Epd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppConfig {
    pub local_epd: Epd,
    pub remote: Option<RemoteSpec>,
    pub flows: Vec<FlowSpec>,
    pub max_runtime: SimTime,
    pub read_delay: SimTime,
    pub start_time: SimTime,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            local_epd: 0,
            remote: None,
            flows: Vec::new(),
            max_runtime: SimTime::from_secs(1800),
            read_delay: SimTime::ZERO,
            start_time: SimTime::ZERO,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AppConfigError {
    #[error("flow id {0} used twice")]
    DuplicateFlowId(u16),
    #[error("flow {flow_id}: {reason}")]
    BadDistribution { flow_id: u16, reason: String },
    #[error("outgoing flows configured without a remote peer")]
    FlowsWithoutRemote,
}

impl AppConfig {
    pub fn validate(&self) -> Result<(), AppConfigError> {
        let mut ids = BTreeSet::new();
        for f in &self.flows {
            if !ids.insert(f.flow_id) {
                return Err(AppConfigError::DuplicateFlowId(f.flow_id));
            }
            for d in [&f.packet_size, &f.send_interval] {
                d.validate().map_err(|reason| AppConfigError::BadDistribution {
                    flow_id: f.flow_id,
                    reason,
                })?;
            }
        }
        if !self.flows.is_empty() && self.remote.is_none() {
            return Err(AppConfigError::FlowsWithoutRemote);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    Send,
    Recv,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Send => "send",
            Direction::Recv => "recv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowStats {
    pub flow_id: u16,
    pub direction: Direction,
    pub msgs_sent: u64,
    pub msgs_recv: u64,
    pub bytes_sent: u64,
    pub bytes_recv: u64,
    pub first_activity: Option<SimTime>,
    pub last_activity: Option<SimTime>,
    pub retransmissions: u64,
    /// SHA-256 over every payload in order.
    pub digest: [u8; 32],
    /// Receive flows only: messages whose index did not follow its predecessor.
    pub out_of_order: u64,
    /// Receive flows only: payload bytes read per [`BIN_WIDTH`] interval.
    pub bins: Vec<u64>,
}

impl FlowStats {
    fn new(flow_id: u16, direction: Direction) -> Self {
        FlowStats {
            flow_id,
            direction,
            msgs_sent: 0,
            msgs_recv: 0,
            bytes_sent: 0,
            bytes_recv: 0,
            first_activity: None,
            last_activity: None,
            retransmissions: 0,
            digest: [0; 32],
            out_of_order: 0,
            bins: Vec::new(),
        }
    }

    fn touch(&mut self, now: SimTime) {
        self.first_activity.get_or_insert(now);
        self.last_activity = Some(now);
    }

    /// Received payload bits over the active interval; zero for send rows.
    pub fn goodput_bps(&self) -> f64 {
        match (self.first_activity, self.last_activity) {
            (Some(a), Some(b)) if b > a => self.bytes_recv as f64 * 8.0 / (b - a).as_secs_f64(),
            _ => 0.0,
        }
    }

    /// Received payload bits per second over `[from, to)`, from the histogram.
    pub fn window_goodput_bps(&self, from: SimTime, to: SimTime) -> f64 {
        if to <= from {
            return 0.0;
        }
        let w = BIN_WIDTH.as_micros();
        let lo = from.as_micros().div_ceil(w) as usize;
        let hi = (to.as_micros() / w) as usize;
        if hi <= lo {
            return 0.0;
        }
        let bytes: u64 = self.bins.iter().take(hi).skip(lo).sum();
        bytes as f64 * 8.0 / (SimTime::from_micros(((hi - lo) as u64) * w)).as_secs_f64()
    }
}

/// Deterministic message body: an 8-byte index followed by a pattern derived from it.
pub fn message_payload(flow_id: u16, index: u64, size: usize) -> Vec<u8> {
    let mut p = Vec::with_capacity(size);
    p.extend_from_slice(&index.to_be_bytes());
    p.truncate(size);
    let seed = (index as u8) ^ (flow_id as u8).rotate_left(3);
    p.extend((p.len()..size).map(|i| seed.wrapping_add(i as u8)));
    p
}

fn payload_index(p: &[u8]) -> Option<u64> {
    p.get(..8).map(|b| u64::from_be_bytes(b.try_into().expect("8 bytes")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AppAction {
    Tick {
        flow: usize,
        at: SimTime,
    },
    Read {
        session: SessionHandle,
        flow_id: u16,
        at: SimTime,
    },
}

struct SendState {
    stats: FlowStats,
    hasher: Sha256,
    size_rng: SimRng,
    interval_rng: SimRng,
    done: bool,
    blocked_ticks: u64,
}

struct RecvState {
    stats: FlowStats,
    hasher: Sha256,
    next_index: Option<u64>,
}

pub struct App {
    id: AppId,
    cfg: AppConfig,
    remote: Option<Address>,
    snd_buffer: u64,
    session: Option<SessionHandle>,
    opened: bool,
    failed: bool,
    send: Vec<SendState>,
    recv: BTreeMap<(SessionHandle, u16), RecvState>,
    pending_reads: BTreeSet<(SessionHandle, u16)>,
    clamped_draws: u64,
}

impl App {
    /// `remote` is the resolved address of `cfg.remote`; `rng` is this app's own stream.
    pub fn new(id: AppId, cfg: AppConfig, remote: Option<Address>, snd_buffer: u64, rng: &SimRng) -> Self {
        let send = cfg
            .flows
            .iter()
            .map(|f| SendState {
                stats: FlowStats::new(f.flow_id, Direction::Send),
                hasher: Sha256::new(),
                size_rng: rng.stream(&format!("flow/{}/size", f.flow_id)),
                interval_rng: rng.stream(&format!("flow/{}/interval", f.flow_id)),
                done: false,
                blocked_ticks: 0,
            })
            .collect();
        App {
            id,
            cfg,
            remote,
            snd_buffer,
            session: None,
            opened: false,
            failed: false,
            send,
            recv: BTreeMap::new(),
            pending_reads: BTreeSet::new(),
            clamped_draws: 0,
        }
    }

    pub fn id(&self) -> AppId {
        self.id
    }

    pub fn config(&self) -> &AppConfig {
        &self.cfg
    }

    pub fn session(&self) -> Option<SessionHandle> {
        self.session
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn clamped_draws(&self) -> u64 {
        self.clamped_draws
    }

    pub fn blocked_ticks(&self) -> u64 {
        self.send.iter().map(|s| s.blocked_ticks).sum()
    }

    /// True once every outgoing flow has handed all its messages to the engine.
    pub fn sending_complete(&self) -> bool {
        self.send.iter().all(|s| s.done)
    }

    /// Registers the endpoint discriminator and, for senders, starts the handshake.
    pub fn start(&mut self, engine: &mut Engine, now: SimTime) -> Result<(), EngineError> {
        engine.register_app(self.cfg.local_epd, self.id)?;
        if let (Some(spec), Some(addr)) = (&self.cfg.remote, self.remote) {
            let h = engine.open_session(now, self.cfg.local_epd, spec.epd, &[addr])?;
            self.session = Some(h);
        }
        Ok(())
    }

    pub fn on_notice(&mut self, notice: &AppNotice, now: SimTime) -> Vec<AppAction> {
        match *notice {
            AppNotice::SessionOpened { session, .. } if Some(session) == self.session => {
                self.opened = true;
                (0..self.send.len())
                    .map(|flow| AppAction::Tick { flow, at: now })
                    .collect()
            }
            AppNotice::SessionOpened { .. } => Vec::new(),
            AppNotice::SessionFailed { session, .. } => {
                if Some(session) == self.session {
                    self.failed = true;
                    for s in &mut self.send {
                        s.done = true;
                    }
                }
                Vec::new()
            }
            AppNotice::DataAvailable { session, flow_id, .. } => {
                if self.pending_reads.insert((session, flow_id)) {
                    vec![AppAction::Read {
                        session,
                        flow_id,
                        at: now + self.cfg.read_delay,
                    }]
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Hands one message to the engine and returns when the next tick is due.
    pub fn send_tick(&mut self, engine: &mut Engine, now: SimTime, flow: usize) -> Option<SimTime> {
        let h = self.session?;
        let spec = &self.cfg.flows[flow];
        let st = &mut self.send[flow];
        if st.done || !self.opened {
            return None;
        }
        if now >= self.cfg.start_time + self.cfg.max_runtime || st.stats.msgs_sent >= spec.num_packets {
            st.done = true;
            return None;
        }
        if engine.queued_bytes(h, spec.flow_id) >= self.snd_buffer {
            st.blocked_ticks += 1;
        } else {
            let raw = spec.packet_size.sample(&mut st.size_rng).round();
            let size = (raw.max(0.0) as usize).clamp(MIN_MESSAGE, MAX_MESSAGE);
            if size as f64 != raw {
                self.clamped_draws += 1;
            }
            let payload = message_payload(spec.flow_id, st.stats.msgs_sent, size);
            if engine
                .send_message(now, h, spec.flow_id, spec.time_critical, &payload)
                .is_err()
            {
                st.done = true;
                return None;
            }
            st.hasher.update(&payload);
            st.stats.msgs_sent += 1;
            st.stats.bytes_sent += size as u64;
            st.stats.touch(now);
            if st.stats.msgs_sent >= spec.num_packets {
                st.done = true;
                return None;
            }
        }
        let gap = spec.send_interval.sample(&mut st.interval_rng).round().max(1.0) as u64;
        Some(now + SimTime::from_micros(gap))
    }

    /// Drains everything the engine has ready on one receive flow.
    pub fn read(&mut self, engine: &mut Engine, now: SimTime, session: SessionHandle, flow_id: u16) {
        self.pending_reads.remove(&(session, flow_id));
        let msgs = engine.read(now, session, flow_id, usize::MAX);
        if msgs.is_empty() {
            return;
        }
        let st = self.recv.entry((session, flow_id)).or_insert_with(|| RecvState {
            stats: FlowStats::new(flow_id, Direction::Recv),
            hasher: Sha256::new(),
            next_index: None,
        });
        let bin = (now.as_micros() / BIN_WIDTH.as_micros()) as usize;
        if st.stats.bins.len() <= bin {
            st.stats.bins.resize(bin + 1, 0);
        }
        for m in msgs {
            let idx = payload_index(&m.payload);
            if st.next_index.is_some_and(|want| idx != Some(want)) {
                st.stats.out_of_order += 1;
            }
            st.next_index = idx.map(|i| i + 1);
            st.hasher.update(&m.payload);
            st.stats.msgs_recv += 1;
            st.stats.bytes_recv += m.payload.len() as u64;
            st.stats.bins[bin] += m.payload.len() as u64;
        }
        st.stats.touch(now);
    }

    /// Statistics for every flow this app sent on or received from.
    pub fn finalize(&self, engine: &Engine) -> Vec<FlowStats> {
        let mut out = Vec::new();
        for st in &self.send {
            let mut s = st.stats.clone();
            s.digest = st.hasher.clone().finalize().into();
            s.retransmissions = self
                .session
                .and_then(|h| engine.session(h))
                .and_then(|sess| sess.send.get(s.flow_id))
                .map_or(0, |f| f.stats().retransmissions);
            out.push(s);
        }
        for st in self.recv.values() {
            let mut s = st.stats.clone();
            s.digest = st.hasher.clone().finalize().into();
            out.push(s);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_carries_index() {
        let p = message_payload(19, 123456, 140);
        assert_eq!(p.len(), 140);
        assert_eq!(payload_index(&p), Some(123456));
        assert_eq!(message_payload(19, 7, 3).len(), 3);
        assert_ne!(message_payload(19, 1, 64), message_payload(88, 1, 64));
    }

    #[test]
    fn duplicate_flow_ids_rejected() {
        let f = FlowSpec {
            flow_id: 1,
            packet_size: Dist::Constant(10.0),
            send_interval: Dist::Constant(10.0),
            num_packets: 1,
            time_critical: false,
        };
        let cfg = AppConfig {
            remote: Some(RemoteSpec {
                host: "host2".into(),
                port: 1,
                epd: 2,
            }),
            flows: vec![f.clone(), f],
            ..Default::default()
        };
        assert_eq!(cfg.validate(), Err(AppConfigError::DuplicateFlowId(1)));
    }

    #[test]
    fn goodput_from_counters() {
        let mut s = FlowStats::new(1, Direction::Recv);
        s.bytes_recv = 125_000;
        s.first_activity = Some(SimTime::from_secs(1));
        s.last_activity = Some(SimTime::from_secs(2));
        assert!((s.goodput_bps() - 1_000_000.0).abs() < 1e-6);
    }

    #[test]
    fn window_goodput_uses_whole_bins() {
        let mut s = FlowStats::new(1, Direction::Recv);
        s.bins = vec![1000; 20];
        // [0.5 s, 1.5 s) covers bins 5..15
        let g = s.window_goodput_bps(SimTime::from_millis(500), SimTime::from_millis(1500));
        assert!((g - 80_000.0).abs() < 1e-6);
    }
}
