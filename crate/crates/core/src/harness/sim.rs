use std::collections::BTreeMap;

use crate::app::{App, AppAction, Direction, FlowStats};
use crate::cc::{CcMode, CcParams};
use crate::engine::{
    Engine, EngineConfig, EngineCounters, EngineOutput, PacketSummary, ProtocolEvent, SessionHandle, TimerToken,
};
use crate::netsim::{
    Address, Datagram, Dist, EventKind, EventQueue, LinkId, LinkOutcome, LinkParams, LinkStats, Network, NodeId,
    NodeKind, SimError, SimRng, SimTime, Trace,
};
use crate::wire::{ACK_FIXED_BODY, CHUNK_HEADER, PACKET_HEADER};

use super::config::{ConfigError, ScenarioConfig, Side};

/// What to record besides the per-flow statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub trace: bool,
    pub cwnd: bool,
    pub events: bool,
}

impl SimOptions {
    pub fn all() -> Self {
        SimOptions {
            trace: true,
            cwnd: true,
            events: true,
        }
    }
}

const BACKGROUND_PORT: u16 = 9;

enum Ev {
    Arrive {
        link: LinkId,
        datagram: Datagram,
    },
    Timer {
        host: usize,
        token: TimerToken,
    },
    AppStart(usize),
    Tick {
        app: usize,
        flow: usize,
    },
    Read {
        app: usize,
        session: SessionHandle,
        flow_id: u16,
    },
    Background,
    Rebind(usize),
}

/// Transmit-side packet accounting for one host.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PacketStats {
    pub packets: u64,
    pub handshake_packets: u64,
    pub data_packets: u64,
    pub data_chunks: u64,
    pub retransmitted_chunks: u64,
    pub ack_chunks: u64,
    pub ack_only_packets: u64,
    /// (encoded size, data chunks) → number of data-carrying packets.
    pub data_packet_shapes: BTreeMap<(usize, u16), u64>,
}

impl PacketStats {
    fn record(&mut self, s: &PacketSummary) {
        self.packets += 1;
        if s.handshake.is_some() {
            self.handshake_packets += 1;
        }
        if s.data_chunks > 0 {
            self.data_packets += 1;
            self.data_chunks += s.data_chunks as u64;
            self.retransmitted_chunks += s.retransmitted as u64;
            *self.data_packet_shapes.entry((s.bytes, s.data_chunks)).or_default() += 1;
        } else if s.ack_chunks > 0 {
            self.ack_only_packets += 1;
        }
        self.ack_chunks += s.ack_chunks as u64;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub seed: u64,
    pub host: String,
    pub app: usize,
    pub stats: FlowStats,
    /// Goodput over the steady-state window (final 80% of the run).
    pub steady_goodput_bps: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CwndRow {
    pub time: SimTime,
    pub host: String,
    pub session: u32,
    pub cwnd: u64,
    pub flight: u64,
    pub mode: CcMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HostReport {
    pub name: String,
    pub counters: EngineCounters,
    pub packets: PacketStats,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub flows: usize,
    pub jain_index: Option<f64>,
    pub utilization: f64,
    pub aggregate_goodput_bps: f64,
    /// min(bottleneck rate, rcvBufferSize·8 / RTT) for a single flow.
    pub bdp_bound_bps: f64,
    pub theory_rtt: SimTime,
}

pub struct RunOutput {
    pub config: ScenarioConfig,
    pub rows: Vec<ResultRow>,
    pub cwnd: Vec<CwndRow>,
    pub trace: Trace,
    pub events: Vec<(SimTime, String, ProtocolEvent)>,
    pub hosts: Vec<HostReport>,
    pub bottleneck: (LinkStats, LinkStats),
    pub background_bytes: u64,
    pub port_unreachable: u64,
    /// RTMFP packets put on the wire before the first one carrying data.
    pub packets_before_first_data: Option<u64>,
    pub summary: Summary,
}

impl RunOutput {
    pub fn violations(&self) -> Vec<String> {
        self.hosts
            .iter()
            .flat_map(|h| h.violations.iter().map(move |v| format!("{}: {v}", h.name)))
            .collect()
    }

    pub fn host(&self, name: &str) -> Option<&HostReport> {
        self.hosts.iter().find(|h| h.name == name)
    }

    pub fn recv_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.stats.direction == Direction::Recv)
    }

    pub fn send_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.stats.direction == Direction::Send)
    }
}

/// Round-trip time used for the receive-window bound: twice the one-way
/// propagation plus bottleneck serialization of one full data packet and one ack.
pub fn theory_rtt(cfg: &ScenarioConfig, mss: usize) -> SimTime {
    let one_way = cfg.bottleneck.delay + cfg.access.delay.times(2);
    let ack = PACKET_HEADER + CHUNK_HEADER + ACK_FIXED_BODY;
    one_way.times(2)
        + SimTime::serialization(mss, cfg.bottleneck.bandwidth_bps)
        + SimTime::serialization(ack, cfg.bottleneck.bandwidth_bps)
}

pub fn bdp_bound_bps(rate_bps: u64, rcv_buffer: u64, rtt: SimTime) -> f64 {
    let rwnd = rcv_buffer as f64 * 8.0 / rtt.as_secs_f64().max(1e-9);
    rwnd.min(rate_bps as f64)
}

struct HostRt {
    name: String,
    node: NodeId,
    engine: Engine,
    packets: PacketStats,
    rebind_port: Option<u16>,
}

struct AppRt {
    host: usize,
    index: usize,
    app: App,
}

struct Background {
    src: NodeId,
    sink: NodeId,
    size: Dist,
    gap: Dist,
    rng: SimRng,
    received: u64,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    opts: SimOptions,
    q: EventQueue<Ev>,
    net: Network,
    hosts: Vec<HostRt>,
    host_by_node: BTreeMap<NodeId, usize>,
    apps: Vec<AppRt>,
    bg: Option<Background>,
    bottleneck: (LinkId, LinkId),
    trace: Trace,
    events: Vec<(SimTime, String, ProtocolEvent)>,
    cwnd: Vec<CwndRow>,
    rtmfp_packets: u64,
    first_data_after: Option<u64>,
    port_unreachable: u64,
    runtime_errors: Vec<String>,
}

impl Simulation {
    /// Builds the dumbbell: hosts on each side attach to their router over fast
    /// access links; the routers share the configured bottleneck.
    pub fn build(cfg: ScenarioConfig, opts: SimOptions) -> Result<Self, ConfigError> {
        let root = SimRng::new(cfg.seed);
        let mut net = Network::new();
        let host_nodes: Vec<(usize, NodeId)> = cfg
            .hosts
            .keys()
            .map(|&i| (i, net.add_node(format!("host{i}"), NodeKind::Host)))
            .collect();
        let left = net.add_node("router-l", NodeKind::Router);
        let right = net.add_node("router-r", NodeKind::Router);
        let b = &cfg.bottleneck;
        let bparams = LinkParams::new(b.bandwidth_bps, b.delay)
            .with_queue(b.queue_bytes)
            .with_loss(b.loss_rate);
        bparams.validate().map_err(|msg| ConfigError { line: 0, msg })?;
        let bottleneck = net.add_duplex(left, right, bparams, &root);
        let a = &cfg.access;
        let aparams = LinkParams::new(a.bandwidth_bps, a.delay)
            .with_queue(a.queue_bytes)
            .with_loss(a.loss_rate);
        aparams.validate().map_err(|msg| ConfigError { line: 0, msg })?;

        let mut hosts = Vec::new();
        let mut host_by_node = BTreeMap::new();
        let mut by_name = BTreeMap::new();
        for &(i, node) in &host_nodes {
            let hc = &cfg.hosts[&i];
            let router = match hc.side {
                Side::Left => left,
                Side::Right => right,
            };
            let (up, _) = net.add_duplex(node, router, aparams, &root);
            for &n in &hc.drop_outgoing {
                net.link_mut(up).force_drop(n);
            }
            let ecfg = EngineConfig {
                local_port: hc.local_port,
                max_segment_size: hc.max_segment_size,
                rcv_buffer_size: hc.rcv_buffer_size,
                snd_buffer_size: hc.snd_buffer_size,
                cc: CcParams {
                    init_cwnd: hc.cwnd_init,
                    ..CcParams::default()
                },
                ..EngineConfig::default()
            };
            let mut engine = Engine::new(node, ecfg, root.stream(&format!("engine/{}", hc.name())));
            engine.set_cwnd_recording(opts.cwnd);
            engine.set_event_log(opts.events || opts.trace);
            host_by_node.insert(node, hosts.len());
            by_name.insert(hc.name(), hosts.len());
            hosts.push(HostRt {
                name: hc.name(),
                node,
                engine,
                packets: PacketStats::default(),
                rebind_port: hc.rebind.map(|(_, p)| p),
            });
        }

        let mut apps = Vec::new();
        for (hi, hc) in cfg.hosts.values().enumerate() {
            for (&ai, ac) in &hc.apps {
                let remote = match &ac.remote {
                    None => None,
                    Some(r) => {
                        let Some(&target) = by_name.get(&r.host) else {
                            return Err(ConfigError {
                                line: 0,
                                msg: format!(
                                    "app.{}.{ai}: remoteAddress {:?} names no configured host",
                                    hc.index, r.host
                                ),
                            });
                        };
                        if target == hi {
                            return Err(ConfigError {
                                line: 0,
                                msg: format!("app.{}.{ai}: remote host is the app's own host", hc.index),
                            });
                        }
                        Some(Address::new(hosts[target].node, r.port))
                    }
                };
                let rng = root.stream(&format!("app/{}/{ai}", hc.index));
                let app = App::new(apps.len(), ac.clone(), remote, hc.snd_buffer_size, &rng);
                apps.push(AppRt {
                    host: hi,
                    index: ai,
                    app,
                });
            }
        }

        let bg = if cfg.background.enabled && cfg.background.load > 0.0 {
            let src = net.add_node("bg-src", NodeKind::Host);
            let sink = net.add_node("bg-sink", NodeKind::Host);
            net.add_duplex(src, left, aparams, &root);
            net.add_duplex(sink, right, aparams, &root);
            let size = cfg.background.packet_size;
            let rate_bytes_per_us = cfg.background.load * b.bandwidth_bps as f64 / 8e6;
            Some(Background {
                src,
                sink,
                size,
                gap: Dist::Exponential(size.mean().max(1.0) / rate_bytes_per_us),
                rng: root.stream("background"),
                received: 0,
            })
        } else {
            None
        };
        net.compute_routes();

        let mut sim = Simulation {
            cfg,
            opts,
            q: EventQueue::new(),
            net,
            hosts,
            host_by_node,
            apps,
            bg,
            bottleneck,
            trace: Trace::new(),
            events: Vec::new(),
            cwnd: Vec::new(),
            rtmfp_packets: 0,
            first_data_after: None,
            port_unreachable: 0,
            runtime_errors: Vec::new(),
        };
        for i in 0..sim.apps.len() {
            let at = sim.apps[i].app.config().start_time;
            let node = sim.hosts[sim.apps[i].host].node;
            sim.schedule(at, node, EventKind::AppTick, Ev::AppStart(i));
        }
        let rebinds: Vec<(usize, SimTime)> = sim
            .cfg
            .hosts
            .values()
            .enumerate()
            .filter_map(|(i, hc)| hc.rebind.map(|(t, _)| (i, t)))
            .collect();
        for (i, t) in rebinds {
            let node = sim.hosts[i].node;
            sim.schedule(t, node, EventKind::AppTick, Ev::Rebind(i));
        }
        if sim.bg.is_some() {
            sim.schedule_background();
        }
        Ok(sim)
    }

    fn schedule(&mut self, at: SimTime, node: NodeId, kind: EventKind, ev: Ev) {
        if let Err(e) = self.q.schedule(at, node, kind, ev) {
            self.runtime_errors.push(e.to_string());
        }
    }

    fn schedule_background(&mut self) {
        let bg = self.bg.as_mut().expect("background configured");
        let gap = bg.gap.sample(&mut bg.rng).round().max(1.0) as u64;
        let (at, src) = (self.q.now() + SimTime::from_micros(gap), bg.src);
        self.schedule(at, src, EventKind::AppTick, Ev::Background);
    }

    fn forward(&mut self, at: NodeId, datagram: Datagram) -> Result<(), SimError> {
        let now = self.q.now();
        if at == datagram.dst.node {
            self.deliver(datagram);
            return Ok(());
        }
        let lid = self.net.next_hop(at, datagram.dst.node)?;
        let link = self.net.link_mut(lid);
        match link.send(&datagram, now) {
            LinkOutcome::Deliver(t) => {
                let to = link.to;
                self.schedule(t, to, EventKind::Datagram, Ev::Arrive { link: lid, datagram });
            }
            LinkOutcome::Dropped(cause) => {
                if self.opts.trace {
                    let name = self.net.node(at).name.clone();
                    self.trace.record(
                        now,
                        &name,
                        "drop",
                        format!(
                            "{cause:?} {} -> {} {}B",
                            datagram.src,
                            datagram.dst,
                            datagram.payload.len()
                        ),
                    );
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, d: Datagram) {
        let now = self.q.now();
        if let Some(bg) = &mut self.bg {
            if d.dst.node == bg.sink {
                bg.received += d.payload.len() as u64;
                return;
            }
        }
        let Some(&hi) = self.host_by_node.get(&d.dst.node) else {
            return;
        };
        if d.dst.port != self.hosts[hi].engine.local_port() {
            self.port_unreachable += 1;
            if self.opts.trace {
                let name = self.hosts[hi].name.clone();
                self.trace
                    .record(now, &name, "unreachable", format!("port {}", d.dst.port));
            }
            return;
        }
        self.hosts[hi].engine.handle_datagram(now, d);
        self.drain(hi);
    }

    /// Routes everything the host's engine produced, feeding notices to apps
    /// until nothing new comes out.
    fn drain(&mut self, hi: usize) {
        let now = self.q.now();
        loop {
            let outputs = self.hosts[hi].engine.take_outputs();
            if outputs.is_empty() {
                break;
            }
            for out in outputs {
                match out {
                    EngineOutput::Transmit { datagram, summary } => {
                        let h = &mut self.hosts[hi];
                        h.packets.record(&summary);
                        self.rtmfp_packets += 1;
                        if summary.data_chunks > 0 && self.first_data_after.is_none() {
                            self.first_data_after = Some(self.rtmfp_packets - 1);
                        }
                        if self.opts.trace {
                            self.trace.record(
                                now,
                                &h.name,
                                "tx",
                                format!("{} -> {} {summary}", datagram.src, datagram.dst),
                            );
                        }
                        let node = h.node;
                        if let Err(e) = self.forward(node, datagram) {
                            self.runtime_errors.push(e.to_string());
                        }
                    }
                    EngineOutput::Timer { at, token } => {
                        let node = self.hosts[hi].node;
                        self.schedule(at, node, EventKind::Timer, Ev::Timer { host: hi, token });
                    }
                    EngineOutput::Notify(notice) => {
                        let id = match &notice {
                            crate::engine::AppNotice::SessionOpened { app, .. }
                            | crate::engine::AppNotice::SessionFailed { app, .. }
                            | crate::engine::AppNotice::DataAvailable { app, .. } => *app,
                        };
                        if self.opts.trace && !matches!(notice, crate::engine::AppNotice::DataAvailable { .. }) {
                            self.trace
                                .record(now, &self.hosts[hi].name, "notify", format!("{notice:?}"));
                        }
                        let actions = self.apps[id].app.on_notice(&notice, now);
                        let node = self.hosts[hi].node;
                        for a in actions {
                            match a {
                                AppAction::Tick { flow, at } => {
                                    self.schedule(at, node, EventKind::AppTick, Ev::Tick { app: id, flow })
                                }
                                AppAction::Read { session, flow_id, at } => self.schedule(
                                    at,
                                    node,
                                    EventKind::AppTick,
                                    Ev::Read {
                                        app: id,
                                        session,
                                        flow_id,
                                    },
                                ),
                            }
                        }
                    }
                }
            }
        }
        self.collect_observations(hi);
    }

    fn collect_observations(&mut self, hi: usize) {
        let h = &mut self.hosts[hi];
        if self.opts.cwnd {
            for s in h.engine.take_cwnd_samples() {
                self.cwnd.push(CwndRow {
                    time: s.time,
                    host: h.name.clone(),
                    session: s.session_id,
                    cwnd: s.cwnd,
                    flight: s.flight,
                    mode: s.mode,
                });
            }
        }
        if self.opts.events || self.opts.trace {
            for (t, ev) in h.engine.take_events() {
                if self.opts.trace {
                    self.trace.record(t, &h.name, "proto", ev.to_string());
                }
                if self.opts.events {
                    self.events.push((t, h.name.clone(), ev));
                }
            }
        }
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimError> {
        let now = self.q.now();
        match ev {
            Ev::Arrive { link, datagram } => {
                let l = self.net.link_mut(link);
                l.mark_delivered(datagram.payload.len());
                let to = l.to;
                self.forward(to, datagram)?;
            }
            Ev::Timer { host, token } => {
                self.hosts[host].engine.on_timer(now, token);
                self.drain(host);
            }
            Ev::AppStart(i) => {
                let hi = self.apps[i].host;
                if self.opts.trace {
                    let detail = format!("app {} epd {}", self.apps[i].index, self.apps[i].app.config().local_epd);
                    self.trace.record(now, &self.hosts[hi].name, "start", detail);
                }
                if let Err(e) = self.apps[i].app.start(&mut self.hosts[hi].engine, now) {
                    self.runtime_errors.push(format!("{}: {e}", self.hosts[hi].name));
                }
                self.drain(hi);
            }
            Ev::Tick { app, flow } => {
                let hi = self.apps[app].host;
                let next = self.apps[app].app.send_tick(&mut self.hosts[hi].engine, now, flow);
                self.drain(hi);
                if let Some(at) = next {
                    let node = self.hosts[hi].node;
                    self.schedule(at, node, EventKind::AppTick, Ev::Tick { app, flow });
                }
            }
            Ev::Read { app, session, flow_id } => {
                let hi = self.apps[app].host;
                self.apps[app]
                    .app
                    .read(&mut self.hosts[hi].engine, now, session, flow_id);
                self.drain(hi);
            }
            Ev::Background => {
                let bg = self.bg.as_mut().expect("background configured");
                let size = (bg.size.sample(&mut bg.rng).round() as usize).clamp(1, 1472);
                let d = Datagram {
                    src: Address::new(bg.src, BACKGROUND_PORT),
                    dst: Address::new(bg.sink, BACKGROUND_PORT),
                    payload: vec![0; size],
                };
                let src = bg.src;
                self.forward(src, d)?;
                self.schedule_background();
            }
            Ev::Rebind(hi) => {
                if let Some(port) = self.hosts[hi].rebind_port {
                    let h = &mut self.hosts[hi];
                    if self.opts.trace {
                        let detail = format!("port {} -> {port}", h.engine.local_port());
                        self.trace.record(now, &h.name, "rebind", detail);
                    }
                    h.engine.set_local_port(port);
                }
            }
        }
        Ok(())
    }

    /// Runs to the configured duration and collects results.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let end = self.cfg.duration;
        while let Some(ev) = self.q.pop_due(end) {
            self.handle(ev.payload)?;
            if let Some(e) = self.runtime_errors.first() {
                return Err(SimError::Invariant(e.clone()));
            }
        }
        self.q.advance_to(end);
        self.net.check_conservation()?;
        Ok(self.finish())
    }

    fn finish(self) -> RunOutput {
        let cfg = self.cfg;
        let end = cfg.duration;
        let steady_from = SimTime::from_micros(end.as_micros() / 5);
        let mut rows = Vec::new();
        for a in &self.apps {
            let h = &self.hosts[a.host];
            for stats in a.app.finalize(&h.engine) {
                rows.push(ResultRow {
                    scenario: cfg.name.clone(),
                    seed: cfg.seed,
                    host: h.name.clone(),
                    app: a.index,
                    steady_goodput_bps: stats.window_goodput_bps(steady_from, end),
                    stats,
                });
            }
        }
        let hosts: Vec<HostReport> = self
            .hosts
            .iter()
            .map(|h| HostReport {
                name: h.name.clone(),
                counters: h.engine.counters().clone(),
                packets: h.packets.clone(),
                violations: h.engine.violations().to_vec(),
            })
            .collect();
        let fwd = self.net.link(self.bottleneck.0).stats().clone();
        let rev = self.net.link(self.bottleneck.1).stats().clone();

        let steady: Vec<f64> = rows
            .iter()
            .filter(|r| r.stats.direction == Direction::Recv)
            .map(|r| r.steady_goodput_bps)
            .collect();
        let rate = cfg.bottleneck.bandwidth_bps;
        let busiest = fwd.bytes_delivered.max(rev.bytes_delivered);
        let utilization = busiest as f64 * 8.0 / (rate as f64 * end.as_secs_f64().max(1e-9));
        let mss = cfg.hosts.values().map(|h| h.max_segment_size).max().unwrap_or(1472);
        let rcv = cfg.hosts.values().map(|h| h.rcv_buffer_size).min().unwrap_or(65536);
        let rtt = theory_rtt(&cfg, mss);
        let summary = Summary {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            flows: steady.len(),
            jain_index: if steady.len() >= 2 {
                super::jain_index(&steady).ok()
            } else {
                None
            },
            utilization,
            aggregate_goodput_bps: steady.iter().sum(),
            bdp_bound_bps: bdp_bound_bps(rate, rcv, rtt),
            theory_rtt: rtt,
        };
        RunOutput {
            config: cfg,
            rows,
            cwnd: self.cwnd,
            trace: self.trace,
            events: self.events,
            hosts,
            bottleneck: (fwd, rev),
            background_bytes: self.bg.map_or(0, |b| b.received),
            port_unreachable: self.port_unreachable,
            packets_before_first_data: self.first_data_after,
            summary,
        }
    }
}

/// Parses, builds and runs one scenario.
pub fn run_config(cfg: ScenarioConfig, opts: SimOptions) -> Result<RunOutput, super::HarnessError> {
    let sim = Simulation::build(cfg, opts)?;
    let out = sim.run()?;
    let v = out.violations();
    if !v.is_empty() {
        return Err(super::HarnessError::Violations(v));
    }
    Ok(out)
}
