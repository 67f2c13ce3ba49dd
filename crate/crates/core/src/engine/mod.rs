//! The protocol layer of one host.
//!
//! Owns sessions (four-way handshake, demultiplexing by session id, peer
//! address mobility), their flows and congestion controllers. The engine is
//! driven entirely by the surrounding event loop: every entry point takes the
//! current time, and side effects (datagrams, timers, app notifications) are
//! queued as [`EngineOutput`]s for the caller to drain.
//!
//! Mobility note: with encryption out of scope, a packet's session id is the
//! only authenticator, so any valid established-mode packet from a new source
//! address moves the session to that address.

mod session;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::cc::{CcMode, CcParams, CcRegistry, CcState};
use crate::flows::{AckDecision, ChunkOutcome, Message, RecvFlow, SendFlows};
use crate::netsim::{Address, Datagram, NodeId, SimRng, SimTime};
use crate::wire::{
    AckChunk, Chunk, ChunkKind, IHello, IIKeying, Packet, PacketMode, RHello, RIKeying, CHUNK_HEADER, COOKIE_LEN,
    PACKET_HEADER,
};

use session::TimerSlot;
pub use session::{Role, RttEstimator, Session, SessionCounters, SessionHandle, SessionState};

/// Endpoint discriminator an application registers under.
pub type Epd = u32;

/// Opaque handle the owner uses to route notifications back to an application.
pub type AppId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub local_port: u16,
    pub max_segment_size: usize,
    pub rcv_buffer_size: u64,
    /// Applications stop handing over data while a flow holds this many unacknowledged bytes.
    pub snd_buffer_size: u64,
    pub cc: CcParams,
    pub handshake_timeout: SimTime,
    pub handshake_attempts: u32,
    pub delayed_ack: SimTime,
    pub rto_min: SimTime,
    pub rto_initial: SimTime,
    pub rto_max: SimTime,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            local_port: 4711,
            max_segment_size: 1472,
            rcv_buffer_size: 65536,
            snd_buffer_size: 256 * 1024,
            cc: CcParams::default(),
            handshake_timeout: SimTime::from_secs(1),
            handshake_attempts: 5,
            delayed_ack: SimTime::from_millis(50),
            rto_min: SimTime::from_millis(200),
            rto_initial: SimTime::from_secs(1),
            rto_max: SimTime::from_secs(60),
        }
    }
}

impl EngineConfig {
    /// Largest data chunk payload that fits one segment on its own.
    pub fn max_chunk_payload(&self) -> usize {
        self.max_segment_size - PACKET_HEADER - CHUNK_HEADER
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("endpoint discriminator {0} is already registered")]
    DuplicateEpd(Epd),
    #[error("endpoint discriminator {0} is not registered")]
    UnknownEpd(Epd),
    #[error("session needs at least one candidate address")]
    NoCandidates,
    #[error("session {0:?} is not open")]
    NotOpen(SessionHandle),
    #[error("no session {0:?}")]
    NoSession(SessionHandle),
    #[error("message payload is empty")]
    EmptyMessage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TimerKind {
    Handshake,
    Rto,
    DelayedAck(u16),
    Persist(u16),
}

impl fmt::Display for TimerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimerKind::Handshake => write!(f, "handshake"),
            TimerKind::Rto => write!(f, "rto"),
            TimerKind::DelayedAck(id) => write!(f, "delayed-ack flow={id}"),
            TimerKind::Persist(id) => write!(f, "persist flow={id}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimerToken {
    pub session: SessionHandle,
    pub kind: TimerKind,
    gen: u64,
}

/// What a transmitted packet carried, for traces and tests.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PacketSummary {
    pub session_id: u32,
    pub handshake: Option<ChunkKind>,
    pub data_chunks: u16,
    pub data_bytes: usize,
    pub retransmitted: u16,
    pub ack_chunks: u16,
    pub bytes: usize,
    pub time_critical: bool,
}

impl fmt::Display for PacketSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sid={:08x} bytes={}", self.session_id, self.bytes)?;
        if let Some(k) = self.handshake {
            write!(f, " hs={k:?}")?;
        }
        write!(
            f,
            " data={} rtx={} acks={}",
            self.data_chunks, self.retransmitted, self.ack_chunks
        )?;
        if self.time_critical {
            write!(f, " tc")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AppNotice {
    SessionOpened {
        app: AppId,
        session: SessionHandle,
        peer_epd: Option<Epd>,
    },
    SessionFailed {
        app: AppId,
        session: SessionHandle,
    },
    DataAvailable {
        app: AppId,
        session: SessionHandle,
        flow_id: u16,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EngineOutput {
    Transmit { datagram: Datagram, summary: PacketSummary },
    Timer { at: SimTime, token: TimerToken },
    Notify(AppNotice),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetransmitCause {
    LossReports,
    Timeout,
}

/// Protocol-level occurrences recorded when logging is enabled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtocolEvent {
    StateChange {
        session: SessionHandle,
        state: SessionState,
    },
    LossDetected {
        session: SessionHandle,
        flow_id: u16,
        seq: u32,
        reports: u8,
        rto_deadline: Option<SimTime>,
    },
    Retransmit {
        session: SessionHandle,
        flow_id: u16,
        seq: u32,
        cause: RetransmitCause,
    },
    Timeout {
        session: SessionHandle,
        backoff: u64,
    },
    Mobility {
        session: SessionHandle,
        from: Address,
        to: Address,
    },
}

impl fmt::Display for ProtocolEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolEvent::StateChange { session, state } => {
                write!(f, "state session={} state={state}", session.0)
            }
            ProtocolEvent::LossDetected {
                session,
                flow_id,
                seq,
                reports,
                rto_deadline,
            } => write!(
                f,
                "loss session={} flow={flow_id} seq={seq} reports={reports} rto_deadline={}",
                session.0,
                rto_deadline.map_or(-1, |t| t.as_micros() as i64)
            ),
            ProtocolEvent::Retransmit {
                session,
                flow_id,
                seq,
                cause,
            } => write!(f, "rtx session={} flow={flow_id} seq={seq} cause={cause:?}", session.0),
            ProtocolEvent::Timeout { session, backoff } => {
                write!(f, "rto session={} backoff={backoff}", session.0)
            }
            ProtocolEvent::Mobility { session, from, to } => {
                write!(f, "mobility session={} from={from} to={to}", session.0)
            }
        }
    }
}

/// One congestion-window observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CwndSample {
    pub time: SimTime,
    pub session_id: u32,
    pub cwnd: u64,
    pub flight: u64,
    pub mode: CcMode,
}

/// Every inbound datagram lands in exactly one of the first three buckets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EngineCounters {
    pub datagrams_in: u64,
    pub delivered_to_session: u64,
    pub unknown_session: u64,
    pub decode_errors: u64,
    /// Subset of `unknown_session`: hellos for an unregistered discriminator.
    pub unknown_epd: u64,
    pub packets_out: u64,
    pub handshake_packets_out: u64,
    pub handshake_retries: u64,
    pub mobility_events: u64,
    pub sessions_opened: u64,
    pub sessions_failed: u64,
}

pub struct Engine {
    cfg: EngineConfig,
    node: NodeId,
    local_port: u16,
    apps: BTreeMap<Epd, AppId>,
    sessions: Vec<Session>,
    by_sid: BTreeMap<u32, SessionHandle>,
    registry: CcRegistry,
    rng: SimRng,
    counters: EngineCounters,
    outputs: Vec<EngineOutput>,
    log_events: bool,
    events: Vec<(SimTime, ProtocolEvent)>,
    record_cwnd: bool,
    cwnd_samples: Vec<CwndSample>,
    violations: Vec<String>,
}

impl Engine {
    pub fn new(node: NodeId, cfg: EngineConfig, rng: SimRng) -> Self {
        Engine {
            local_port: cfg.local_port,
            cfg,
            node,
            apps: BTreeMap::new(),
            sessions: Vec::new(),
            by_sid: BTreeMap::new(),
            registry: CcRegistry::new(),
            rng,
            counters: EngineCounters::default(),
            outputs: Vec::new(),
            log_events: false,
            events: Vec::new(),
            record_cwnd: false,
            cwnd_samples: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn set_event_log(&mut self, on: bool) {
        self.log_events = on;
    }

    pub fn set_cwnd_recording(&mut self, on: bool) {
        self.record_cwnd = on;
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn local_port(&self) -> u16 {
        self.local_port
    }

    pub fn local_address(&self) -> Address {
        Address::new(self.node, self.local_port)
    }

    /// Rebinds the layer to a new port; later packets leave from the new address.
    pub fn set_local_port(&mut self, port: u16) {
        self.local_port = port;
    }

    pub fn counters(&self) -> &EngineCounters {
        &self.counters
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn session(&self, h: SessionHandle) -> Option<&Session> {
        self.sessions.get(h.0)
    }

    pub fn take_outputs(&mut self) -> Vec<EngineOutput> {
        std::mem::take(&mut self.outputs)
    }

    pub fn take_events(&mut self) -> Vec<(SimTime, ProtocolEvent)> {
        std::mem::take(&mut self.events)
    }

    pub fn take_cwnd_samples(&mut self) -> Vec<CwndSample> {
        std::mem::take(&mut self.cwnd_samples)
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn register_app(&mut self, epd: Epd, app: AppId) -> Result<(), EngineError> {
        if self.apps.contains_key(&epd) {
            return Err(EngineError::DuplicateEpd(epd));
        }
        self.apps.insert(epd, app);
        Ok(())
    }

    fn log(&mut self, now: SimTime, ev: ProtocolEvent) {
        if self.log_events {
            self.events.push((now, ev));
        }
    }

    fn fresh_sid(&mut self) -> u32 {
        loop {
            let sid = self.rng.next_u32();
            if sid != 0 && !self.by_sid.contains_key(&sid) {
                return sid;
            }
        }
    }

    fn new_session(&mut self, role: Role, local_epd: Epd, app: AppId) -> SessionHandle {
        let handle = SessionHandle(self.sessions.len());
        let local_sid = self.fresh_sid();
        let tag = self.rng.next_u32();
        let mut cookie = [0u8; COOKIE_LEN];
        if role == Role::Responder {
            self.rng.fill_bytes(&mut cookie);
        }
        self.by_sid.insert(local_sid, handle);
        self.sessions.push(Session {
            handle,
            role,
            state: SessionState::Idle,
            local_sid,
            remote_sid: 0,
            local_epd,
            remote_epd: None,
            app,
            peer_address: None,
            candidates: Vec::new(),
            peer_rcv_buffer: self.cfg.rcv_buffer_size,
            peer_time_critical: false,
            cc: CcState::new(self.cfg.cc),
            rtt: RttEstimator::default(),
            send: SendFlows::new(),
            recv: BTreeMap::new(),
            counters: SessionCounters::default(),
            tag,
            cookie,
            handshake_attempts: 0,
            handshake_timer: TimerSlot::default(),
            rto_timer: TimerSlot::default(),
            rto_backoff: 1,
            ack_timers: BTreeMap::new(),
            persist_timers: BTreeMap::new(),
            ack_now: Default::default(),
            last_cc_sample: None,
        });
        handle
    }

    fn set_state(&mut self, h: SessionHandle, state: SessionState, now: SimTime) {
        let s = &mut self.sessions[h.0];
        s.state = state;
        match state {
            SessionState::Open => self.registry.register(s.local_sid),
            SessionState::Closed => self.registry.remove(s.local_sid),
            _ => {}
        }
        self.log(now, ProtocolEvent::StateChange { session: h, state });
    }

    fn arm(&mut self, h: SessionHandle, kind: TimerKind, at: SimTime) {
        let s = &mut self.sessions[h.0];
        let slot = match kind {
            TimerKind::Handshake => &mut s.handshake_timer,
            TimerKind::Rto => &mut s.rto_timer,
            TimerKind::DelayedAck(id) => s.ack_timers.entry(id).or_default(),
            TimerKind::Persist(id) => s.persist_timers.entry(id).or_default(),
        };
        let gen = slot.arm(at);
        self.outputs.push(EngineOutput::Timer {
            at,
            token: TimerToken { session: h, kind, gen },
        });
    }

    fn send_packet(&mut self, h: SessionHandle, dst: Address, packet: Packet, mut summary: PacketSummary) {
        let bytes = match packet.encode(self.cfg.max_segment_size) {
            Ok(b) => b,
            Err(e) => {
                self.violations
                    .push(format!("bundler produced unencodable packet: {e}"));
                return;
            }
        };
        summary.session_id = packet.session_id;
        summary.bytes = bytes.len();
        summary.time_critical = packet.time_critical;
        let s = &mut self.sessions[h.0];
        s.counters.packets_out += 1;
        self.counters.packets_out += 1;
        if summary.handshake.is_some() {
            s.counters.handshake_packets_out += 1;
            self.counters.handshake_packets_out += 1;
        }
        self.outputs.push(EngineOutput::Transmit {
            datagram: Datagram {
                src: Address::new(self.node, self.local_port),
                dst,
                payload: bytes,
            },
            summary,
        });
    }

    fn send_handshake(&mut self, h: SessionHandle, dst: Address, sid: u32, chunk: Chunk, now: SimTime) {
        let kind = chunk.kind();
        let packet = Packet {
            session_id: sid,
            mode: PacketMode::Handshake,
            time_critical: false,
            timestamp: now.as_micros() as u32,
            chunks: vec![chunk],
        };
        let summary = PacketSummary {
            handshake: Some(kind),
            ..Default::default()
        };
        self.send_packet(h, dst, packet, summary);
    }

    /// Starts a handshake toward `remote_epd`, probing every candidate address.
    pub fn open_session(
        &mut self,
        now: SimTime,
        local_epd: Epd,
        remote_epd: Epd,
        candidates: &[Address],
    ) -> Result<SessionHandle, EngineError> {
        let app = *self.apps.get(&local_epd).ok_or(EngineError::UnknownEpd(local_epd))?;
        if candidates.is_empty() {
            return Err(EngineError::NoCandidates);
        }
        let h = self.new_session(Role::Initiator, local_epd, app);
        let s = &mut self.sessions[h.0];
        s.remote_epd = Some(remote_epd);
        s.candidates = candidates.to_vec();
        self.send_hellos(h, now);
        self.set_state(h, SessionState::IHelloSent, now);
        Ok(h)
    }

    fn send_hellos(&mut self, h: SessionHandle, now: SimTime) {
        let s = &mut self.sessions[h.0];
        s.handshake_attempts += 1;
        let hello = IHello {
            target_epd: s.remote_epd.expect("initiator knows its target"),
            tag: s.tag,
        };
        let candidates = s.candidates.clone();
        for dst in candidates {
            self.send_handshake(h, dst, 0, Chunk::IHello(hello.clone()), now);
        }
        self.arm_handshake_timer(h, now);
    }

    fn send_keying(&mut self, h: SessionHandle, now: SimTime) {
        let s = &mut self.sessions[h.0];
        s.handshake_attempts += 1;
        let chunk = Chunk::IIKeying(IIKeying {
            initiator_session: s.local_sid,
            initiator_epd: s.local_epd,
            rcv_buffer: self.cfg.rcv_buffer_size.min(u32::MAX as u64) as u32,
            cookie: s.cookie,
        });
        let dst = s.peer_address.expect("keying follows rhello");
        self.send_handshake(h, dst, 0, chunk, now);
        self.arm_handshake_timer(h, now);
    }

    fn arm_handshake_timer(&mut self, h: SessionHandle, now: SimTime) {
        let attempts = self.sessions[h.0].handshake_attempts;
        let wait = self.cfg.handshake_timeout.times(1 << (attempts - 1).min(30));
        self.arm(h, TimerKind::Handshake, now + wait);
    }

    /// Entry point for every datagram addressed to this layer's port.
    pub fn handle_datagram(&mut self, now: SimTime, d: Datagram) {
        self.counters.datagrams_in += 1;
        let packet = match Packet::decode(&d.payload) {
            Ok(p) => p,
            Err(_) => {
                self.counters.decode_errors += 1;
                return;
            }
        };
        if packet.session_id == 0 {
            self.handle_unaddressed(now, d.src, packet);
        } else {
            match self.by_sid.get(&packet.session_id).copied() {
                Some(h) => {
                    self.counters.delivered_to_session += 1;
                    self.handle_session_packet(now, h, d.src, packet);
                }
                None => self.counters.unknown_session += 1,
            }
        }
        self.refresh_modes(now);
    }

    /// Handshake packets sent before the sender knows our session id.
    fn handle_unaddressed(&mut self, now: SimTime, src: Address, packet: Packet) {
        let mut matched = false;
        let mut unknown_epd = false;
        for chunk in packet.chunks {
            match chunk {
                Chunk::IHello(hello) => match self.apps.get(&hello.target_epd).copied() {
                    None => unknown_epd = true,
                    Some(app) => {
                        matched = true;
                        self.on_ihello(now, src, hello, app);
                    }
                },
                Chunk::RHello(r) => matched |= self.on_rhello(now, src, r),
                Chunk::IIKeying(k) => matched |= self.on_iikeying(now, src, k),
                _ => {}
            }
        }
        if matched {
            self.counters.delivered_to_session += 1;
        } else {
            self.counters.unknown_session += 1;
            if unknown_epd {
                self.counters.unknown_epd += 1;
            }
        }
    }

    fn on_ihello(&mut self, now: SimTime, src: Address, hello: IHello, app: AppId) {
        let existing = self.sessions.iter().position(|s| {
            s.role == Role::Responder
                && s.state == SessionState::RHelloSent
                && s.tag == hello.tag
                && s.peer_address == Some(src)
        });
        let h = match existing {
            Some(i) => SessionHandle(i),
            None => {
                let h = self.new_session(Role::Responder, hello.target_epd, app);
                let s = &mut self.sessions[h.0];
                s.tag = hello.tag;
                s.peer_address = Some(src);
                self.set_state(h, SessionState::RHelloSent, now);
                h
            }
        };
        let s = &self.sessions[h.0];
        let reply = Chunk::RHello(RHello {
            tag: s.tag,
            cookie: s.cookie,
        });
        self.send_handshake(h, src, 0, reply, now);
    }

    fn on_rhello(&mut self, now: SimTime, src: Address, r: RHello) -> bool {
        let Some(i) = self
            .sessions
            .iter()
            .position(|s| s.role == Role::Initiator && s.state == SessionState::IHelloSent && s.tag == r.tag)
        else {
            return false;
        };
        let h = SessionHandle(i);
        let s = &mut self.sessions[i];
        // first responder wins
        s.peer_address = Some(src);
        s.cookie = r.cookie;
        s.handshake_attempts = 0;
        self.set_state(h, SessionState::KeyingSent, now);
        self.send_keying(h, now);
        true
    }

    fn on_iikeying(&mut self, now: SimTime, src: Address, k: IIKeying) -> bool {
        let Some(i) = self.sessions.iter().position(|s| {
            s.role == Role::Responder
                && matches!(s.state, SessionState::RHelloSent | SessionState::Open)
                && s.cookie == k.cookie
        }) else {
            return false;
        };
        let h = SessionHandle(i);
        let newly_open = self.sessions[i].state == SessionState::RHelloSent;
        if newly_open {
            let s = &mut self.sessions[i];
            s.remote_sid = k.initiator_session;
            s.remote_epd = Some(k.initiator_epd);
            s.peer_address = Some(src);
            s.peer_rcv_buffer = k.rcv_buffer as u64;
            self.set_state(h, SessionState::Open, now);
            self.counters.sessions_opened += 1;
        }
        let s = &self.sessions[i];
        let reply = Chunk::RIKeying(RIKeying {
            responder_session: s.local_sid,
            rcv_buffer: self.cfg.rcv_buffer_size.min(u32::MAX as u64) as u32,
        });
        let (dst, sid, app, peer_epd) = (s.peer_address.expect("set"), s.remote_sid, s.app, s.remote_epd);
        self.send_handshake(h, dst, sid, reply, now);
        if newly_open {
            self.outputs.push(EngineOutput::Notify(AppNotice::SessionOpened {
                app,
                session: h,
                peer_epd,
            }));
        }
        true
    }

    fn on_rikeying(&mut self, now: SimTime, h: SessionHandle, src: Address, k: RIKeying) {
        let s = &mut self.sessions[h.0];
        if s.role != Role::Initiator || s.state != SessionState::KeyingSent {
            return;
        }
        s.remote_sid = k.responder_session;
        s.peer_rcv_buffer = k.rcv_buffer as u64;
        s.peer_address = Some(src);
        s.handshake_timer.disarm();
        let (app, peer_epd) = (s.app, s.remote_epd);
        self.set_state(h, SessionState::Open, now);
        self.counters.sessions_opened += 1;
        self.outputs.push(EngineOutput::Notify(AppNotice::SessionOpened {
            app,
            session: h,
            peer_epd,
        }));
    }

    fn handle_session_packet(&mut self, now: SimTime, h: SessionHandle, src: Address, packet: Packet) {
        self.sessions[h.0].counters.packets_in += 1;
        if packet.mode == PacketMode::Handshake {
            for chunk in packet.chunks {
                if let Chunk::RIKeying(k) = chunk {
                    self.on_rikeying(now, h, src, k);
                }
            }
            self.transmit(h, now);
            return;
        }
        if !self.sessions[h.0].is_open() {
            return;
        }

        let s = &mut self.sessions[h.0];
        if s.peer_address != Some(src) {
            let from = s.peer_address.expect("open session has a peer");
            s.peer_address = Some(src);
            s.counters.mobility_events += 1;
            self.counters.mobility_events += 1;
            self.log(
                now,
                ProtocolEvent::Mobility {
                    session: h,
                    from,
                    to: src,
                },
            );
        }
        let s = &mut self.sessions[h.0];
        s.peer_time_critical = packet.time_critical;

        let mut touched: Vec<(u16, usize)> = Vec::new();
        for chunk in packet.chunks {
            match chunk {
                Chunk::Data(d) => {
                    let flow_id = d.flow_id;
                    let capacity = self.cfg.rcv_buffer_size;
                    let s = &mut self.sessions[h.0];
                    let flow = s
                        .recv
                        .entry(flow_id)
                        .or_insert_with(|| RecvFlow::new(flow_id, capacity));
                    if !touched.iter().any(|(id, _)| *id == flow_id) {
                        touched.push((flow_id, flow.ready_messages()));
                    }
                    let _: ChunkOutcome = flow.on_data_chunk(d);
                }
                Chunk::Ack(a) => self.on_ack_chunk(now, h, a),
                Chunk::Close => {
                    self.set_state(h, SessionState::Closed, now);
                    return;
                }
                _ => {}
            }
        }

        for (flow_id, ready_before) in touched {
            let s = &mut self.sessions[h.0];
            let flow = s.recv.get_mut(&flow_id).expect("touched flow exists");
            let fresh = flow.ready_messages() > ready_before;
            match flow.on_packet_end() {
                AckDecision::Now => {
                    s.ack_now.insert(flow_id);
                }
                AckDecision::Delay => {
                    let armed = s.ack_timers.get(&flow_id).is_some_and(|t| t.is_armed());
                    if !armed {
                        self.arm(h, TimerKind::DelayedAck(flow_id), now + self.cfg.delayed_ack);
                    }
                }
            }
            if fresh {
                let app = self.sessions[h.0].app;
                self.outputs.push(EngineOutput::Notify(AppNotice::DataAvailable {
                    app,
                    session: h,
                    flow_id,
                }));
            }
        }
        self.transmit(h, now);
    }

    fn on_ack_chunk(&mut self, now: SimTime, h: SessionHandle, ack: AckChunk) {
        let s = &mut self.sessions[h.0];
        let Some(flow) = s.send.get_mut(ack.flow_id) else {
            return;
        };
        let out = flow.on_ack(&ack, now);
        if let Some(rtt) = out.rtt_sample {
            s.rtt.sample(rtt);
        }
        if out.acked_flight_bytes > 0 {
            s.cc.on_ack_progress(out.acked_flight_bytes, now);
            self.note_cc(h, now);
        }
        let s = &mut self.sessions[h.0];
        if out.losses_detected > 0 {
            let deadline = s.rto_timer.deadline;
            s.cc.on_bytes_lost(out.lost_flight_bytes);
            let coalesce = s.rtt.srtt().unwrap_or(SimTime::ZERO);
            s.cc.on_loss_event(now, coalesce);
            for &(seq, reports) in &out.lost_seqs {
                self.log(
                    now,
                    ProtocolEvent::LossDetected {
                        session: h,
                        flow_id: ack.flow_id,
                        seq,
                        reports,
                        rto_deadline: deadline,
                    },
                );
            }
            self.note_cc(h, now);
        }
        if out.newly_acked_bytes > 0 {
            let s = &mut self.sessions[h.0];
            s.rto_backoff = 1;
            if s.send.has_in_flight() {
                let rto = s.rto(self.cfg.rto_min, self.cfg.rto_initial, self.cfg.rto_max);
                self.arm(h, TimerKind::Rto, now + rto);
            } else {
                s.rto_timer.disarm();
            }
        }
    }

    pub fn on_timer(&mut self, now: SimTime, token: TimerToken) {
        let h = token.session;
        let Some(s) = self.sessions.get_mut(h.0) else {
            return;
        };
        let slot = match token.kind {
            TimerKind::Handshake => Some(&mut s.handshake_timer),
            TimerKind::Rto => Some(&mut s.rto_timer),
            TimerKind::DelayedAck(id) => s.ack_timers.get_mut(&id),
            TimerKind::Persist(id) => s.persist_timers.get_mut(&id),
        };
        if !slot.is_some_and(|slot| slot.fire(token.gen)) {
            return;
        }
        match token.kind {
            TimerKind::Handshake => self.on_handshake_timeout(now, h),
            TimerKind::Rto => self.on_rto(now, h),
            TimerKind::DelayedAck(id) => {
                let s = &mut self.sessions[h.0];
                if s.recv.get(&id).is_some_and(|f| f.ack_pending()) {
                    s.ack_now.insert(id);
                }
                self.transmit(h, now);
            }
            TimerKind::Persist(id) => {
                let s = &mut self.sessions[h.0];
                if let Some(f) = s.send.get_mut(id) {
                    if f.window_blocked() {
                        f.allow_probe();
                        s.counters.window_probes += 1;
                    }
                }
                self.transmit(h, now);
            }
        }
        self.refresh_modes(now);
    }

    fn on_handshake_timeout(&mut self, now: SimTime, h: SessionHandle) {
        let s = &self.sessions[h.0];
        let state = s.state;
        if !matches!(state, SessionState::IHelloSent | SessionState::KeyingSent) {
            return;
        }
        if s.handshake_attempts >= self.cfg.handshake_attempts {
            let app = s.app;
            self.set_state(h, SessionState::Closed, now);
            self.counters.sessions_failed += 1;
            self.outputs
                .push(EngineOutput::Notify(AppNotice::SessionFailed { app, session: h }));
            return;
        }
        self.sessions[h.0].counters.handshake_retries += 1;
        self.counters.handshake_retries += 1;
        if state == SessionState::IHelloSent {
            self.send_hellos(h, now);
        } else {
            self.send_keying(h, now);
        }
    }

    /// Retransmission timeout: every in-flight chunk is queued for resend and
    /// the controller falls back to its initial window.
    pub fn on_rto(&mut self, now: SimTime, h: SessionHandle) {
        let s = &mut self.sessions[h.0];
        if !s.is_open() || !s.send.has_in_flight() {
            return;
        }
        for f in s.send.iter_mut() {
            f.on_rto();
        }
        s.cc.on_timeout();
        s.rto_backoff = (s.rto_backoff * 2).min(64);
        s.counters.rto_expiries += 1;
        let backoff = s.rto_backoff;
        self.log(now, ProtocolEvent::Timeout { session: h, backoff });
        self.note_cc(h, now);
        self.transmit(h, now);
        let s = &self.sessions[h.0];
        if s.send.has_in_flight() && !s.rto_timer.is_armed() {
            let rto = s.rto(self.cfg.rto_min, self.cfg.rto_initial, self.cfg.rto_max);
            self.arm(h, TimerKind::Rto, now + rto);
        }
    }

    /// Queues one application message on `flow_id`, creating the flow on first use.
    pub fn send_message(
        &mut self,
        now: SimTime,
        h: SessionHandle,
        flow_id: u16,
        time_critical: bool,
        payload: &[u8],
    ) -> Result<(), EngineError> {
        if payload.is_empty() {
            return Err(EngineError::EmptyMessage);
        }
        let max_chunk = self.cfg.max_chunk_payload();
        let s = self.sessions.get_mut(h.0).ok_or(EngineError::NoSession(h))?;
        if !s.is_open() {
            return Err(EngineError::NotOpen(h));
        }
        let peer_adv = s.peer_rcv_buffer;
        s.send
            .get_or_insert(flow_id, time_critical, peer_adv)
            .enqueue_message(payload, max_chunk);
        self.refresh_modes(now);
        self.transmit(h, now);
        Ok(())
    }

    /// Bytes handed to `flow_id` that the peer has not yet acknowledged.
    pub fn queued_bytes(&self, h: SessionHandle, flow_id: u16) -> u64 {
        self.sessions
            .get(h.0)
            .and_then(|s| s.send.get(flow_id))
            .map_or(0, |f| f.queued_bytes())
    }

    /// Pulls complete messages from a receive flow, freeing buffer space.
    pub fn read(&mut self, now: SimTime, h: SessionHandle, flow_id: u16, max_bytes: usize) -> Vec<Message> {
        let min_chunk = self.cfg.max_chunk_payload() as u64;
        let Some(s) = self.sessions.get_mut(h.0) else {
            return Vec::new();
        };
        let open = s.is_open();
        let Some(flow) = s.recv.get_mut(&flow_id) else {
            return Vec::new();
        };
        let msgs = flow.app_read(max_bytes);
        if open && flow.wants_window_update(min_chunk) {
            s.ack_now.insert(flow_id);
            self.transmit(h, now);
        }
        msgs
    }

    pub fn close_session(&mut self, now: SimTime, h: SessionHandle) {
        let Some(s) = self.sessions.get(h.0) else {
            return;
        };
        if s.is_open() {
            let packet = Packet {
                session_id: s.remote_sid,
                mode: PacketMode::Established,
                time_critical: false,
                timestamp: now.as_micros() as u32,
                chunks: vec![Chunk::Close],
            };
            let dst = s.peer_address.expect("open session has a peer");
            self.send_packet(h, dst, packet, PacketSummary::default());
        }
        self.set_state(h, SessionState::Closed, now);
        let s = &mut self.sessions[h.0];
        s.rto_timer.disarm();
        s.handshake_timer.disarm();
    }

    /// Sends acks and as much data as the congestion window, the peer's
    /// advertised buffers and the segment size allow.
    pub fn transmit(&mut self, h: SessionHandle, now: SimTime) {
        if !self.sessions[h.0].is_open() {
            return;
        }
        let mss = self.cfg.max_segment_size;
        let header = PACKET_HEADER as u64;
        loop {
            let s = &mut self.sessions[h.0];
            let mut chunks = Vec::new();
            let mut used = PACKET_HEADER;
            while let Some(&flow_id) = s.ack_now.first() {
                let Some(flow) = s.recv.get_mut(&flow_id) else {
                    s.ack_now.remove(&flow_id);
                    continue;
                };
                let ack = flow.build_ack();
                let len = CHUNK_HEADER + crate::wire::ACK_FIXED_BODY + 8 * ack.gaps.len();
                if used + len > mss && !chunks.is_empty() {
                    break;
                }
                s.ack_now.remove(&flow_id);
                if let Some(t) = s.ack_timers.get_mut(&flow_id) {
                    t.disarm();
                }
                used += len;
                chunks.push(Chunk::Ack(ack));
            }
            let ack_chunks = chunks.len() as u16;

            let room = s.cc.room();
            let filled = if room > header {
                let budget = (mss - used).min((room - header) as usize);
                s.send.fill_packet(budget, header, now)
            } else {
                None
            };
            if chunks.is_empty() && filled.is_none() {
                break;
            }

            let mut summary = PacketSummary {
                ack_chunks,
                ..Default::default()
            };
            let mut retransmitted = Vec::new();
            if let Some(f) = filled {
                s.cc.on_sent(f.flight_bytes);
                if s.cc.flight_size() > s.cc.cwnd() {
                    self.violations.push(format!(
                        "flight {} exceeds cwnd {} at send",
                        s.cc.flight_size(),
                        s.cc.cwnd()
                    ));
                }
                if f.time_critical_eligible && f.chunks.iter().any(|c| !c.time_critical) {
                    self.violations
                        .push("normal chunk bundled while time-critical data was eligible".into());
                }
                for c in &f.chunks {
                    if f.retransmitted.contains(&(c.flow_id, c.seq)) {
                        continue;
                    }
                    let flow = s.send.get(c.flow_id).expect("flow exists");
                    if flow.outstanding() > flow.peer_adv_buffer().max(c.payload.len() as u64) {
                        self.violations.push(format!(
                            "flow {} outstanding {} exceeds advertised {}",
                            c.flow_id,
                            flow.outstanding(),
                            flow.peer_adv_buffer()
                        ));
                    }
                }
                summary.data_chunks = f.chunks.len() as u16;
                summary.data_bytes = f.chunks.iter().map(|c| c.payload.len()).sum();
                summary.retransmitted = f.retransmitted.len() as u16;
                retransmitted = f.retransmitted;
                chunks.extend(f.chunks.into_iter().map(Chunk::Data));
            }
            let carries_data = summary.data_chunks > 0;
            let packet = Packet {
                session_id: s.remote_sid,
                mode: PacketMode::Established,
                time_critical: s.send.has_time_critical_data(),
                timestamp: now.as_micros() as u32,
                chunks,
            };
            let dst = s.peer_address.expect("open session has a peer");
            let timer_idle = !s.rto_timer.is_armed();
            self.send_packet(h, dst, packet, summary);
            if carries_data {
                self.note_cc(h, now);
                let cause = if self.sessions[h.0].counters.rto_expiries > 0 && self.sessions[h.0].rto_backoff > 1 {
                    RetransmitCause::Timeout
                } else {
                    RetransmitCause::LossReports
                };
                for (flow_id, seq) in retransmitted {
                    self.log(
                        now,
                        ProtocolEvent::Retransmit {
                            session: h,
                            flow_id,
                            seq,
                            cause,
                        },
                    );
                }
                if timer_idle {
                    let s = &self.sessions[h.0];
                    let rto = s.rto(self.cfg.rto_min, self.cfg.rto_initial, self.cfg.rto_max);
                    self.arm(h, TimerKind::Rto, now + rto);
                }
            }
        }

        // zero-window persistence
        let s = &self.sessions[h.0];
        let blocked: Vec<u16> = s
            .send
            .iter()
            .filter(|f| f.window_blocked())
            .map(|f| f.flow_id())
            .filter(|id| !s.persist_timers.get(id).is_some_and(|t| t.is_armed()))
            .collect();
        if !blocked.is_empty() {
            let rto = s.rto(self.cfg.rto_min, self.cfg.rto_initial, self.cfg.rto_max);
            for id in blocked {
                self.arm(h, TimerKind::Persist(id), now + rto);
            }
        }
    }

    fn note_cc(&mut self, h: SessionHandle, now: SimTime) {
        if !self.record_cwnd {
            return;
        }
        let s = &mut self.sessions[h.0];
        let obs = (s.cc.cwnd(), s.cc.flight_size(), s.cc.mode());
        if s.last_cc_sample == Some(obs) {
            return;
        }
        s.last_cc_sample = Some(obs);
        self.cwnd_samples.push(CwndSample {
            time: now,
            session_id: s.local_sid,
            cwnd: obs.0,
            flight: obs.1,
            mode: obs.2,
        });
    }

    /// Re-derives every open session's controller mode from the host-wide registry.
    fn refresh_modes(&mut self, now: SimTime) {
        for s in &self.sessions {
            if s.is_open() {
                self.registry
                    .set_time_critical(s.local_sid, s.send.has_time_critical_data());
            }
        }
        for i in 0..self.sessions.len() {
            let s = &mut self.sessions[i];
            if !s.is_open() {
                continue;
            }
            let mode = self.registry.mode_of(s.local_sid, s.peer_time_critical);
            if s.cc.mode() != mode {
                s.cc.set_mode(mode);
                self.note_cc(SessionHandle(i), now);
            }
        }
    }
}
