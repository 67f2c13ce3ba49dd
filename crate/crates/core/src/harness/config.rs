use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::app::{AppConfig, FlowSpec, RemoteSpec};
use crate::netsim::{Dist, SimTime, DEFAULT_QUEUE_CAPACITY};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to one line.
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { line, msg: msg.into() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkSpec {
    pub bandwidth_bps: u64,
    pub delay: SimTime,
    pub queue_bytes: usize,
    pub loss_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundSpec {
    pub enabled: bool,
    /// Offered load as a fraction of the bottleneck rate.
    pub load: f64,
    pub packet_size: Dist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HostConfig {
    pub index: usize,
    pub side: Side,
    pub local_port: u16,
    pub max_segment_size: usize,
    pub rcv_buffer_size: u64,
    pub snd_buffer_size: u64,
    pub cwnd_init: u64,
    pub num_apps: Option<usize>,
    pub rebind: Option<(SimTime, u16)>,
    /// 1-based indices of datagrams to drop on the host's uplink.
    pub drop_outgoing: Vec<u64>,
    pub apps: BTreeMap<usize, AppConfig>,
}

impl HostConfig {
    pub fn name(&self) -> String {
        format!("host{}", self.index)
    }

    fn new(index: usize) -> Self {
        HostConfig {
            index,
            side: if index % 2 == 1 { Side::Left } else { Side::Right },
            local_port: 4711,
            max_segment_size: 1472,
            rcv_buffer_size: 65536,
            snd_buffer_size: 256 * 1024,
            cwnd_init: 4380,
            num_apps: None,
            rebind: None,
            drop_outgoing: Vec::new(),
            apps: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration: SimTime,
    pub bottleneck: LinkSpec,
    pub access: LinkSpec,
    pub background: BackgroundSpec,
    pub hosts: BTreeMap<usize, HostConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            seed: 1,
            duration: SimTime::from_secs(10),
            bottleneck: LinkSpec {
                bandwidth_bps: 10_000_000,
                delay: SimTime::from_millis(20),
                queue_bytes: DEFAULT_QUEUE_CAPACITY,
                loss_rate: 0.0,
            },
            access: LinkSpec {
                bandwidth_bps: 1_000_000_000,
                delay: SimTime::ZERO,
                queue_bytes: DEFAULT_QUEUE_CAPACITY,
                loss_rate: 0.0,
            },
            background: BackgroundSpec {
                enabled: false,
                load: 0.05,
                packet_size: Dist::Uniform(64.0, 1400.0),
            },
            hosts: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unit {
    Bytes,
    Time,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Bytes => "byte",
            Unit::Time => "us/ms/s",
        })
    }
}

fn split_number(s: &str) -> (&str, &str) {
    let end = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e'))
        .unwrap_or(s.len());
    // "1e" followed by a unit letter is not an exponent
    let end = if end > 0 && s[..end].ends_with('e') {
        end - 1
    } else {
        end
    };
    (&s[..end], s[end..].trim())
}

/// Parses a dimensioned scalar into base units (bytes or microseconds).
fn parse_scalar(s: &str, unit: Unit, line: usize) -> Result<f64, ConfigError> {
    let s = s.trim();
    let (num, suffix) = split_number(s);
    let v: f64 = match num.parse() {
        Ok(v) => v,
        Err(_) => return err(line, format!("expected a number with unit {unit}, got {s:?}")),
    };
    let scale = match (unit, suffix) {
        (Unit::Bytes, "byte" | "B") => 1.0,
        (Unit::Bytes, "KiB") => 1024.0,
        (Unit::Bytes, "MiB") => 1024.0 * 1024.0,
        (Unit::Time, "us") => 1.0,
        (Unit::Time, "ms") => 1e3,
        (Unit::Time, "s") => 1e6,
        (_, "") => return err(line, format!("missing unit ({unit}) in {s:?}")),
        _ => return err(line, format!("bad unit {suffix:?}, expected {unit}")),
    };
    if !v.is_finite() || v < 0.0 {
        return err(line, format!("value must be non-negative: {s:?}"));
    }
    Ok(v * scale)
}

fn parse_bytes(s: &str, line: usize) -> Result<u64, ConfigError> {
    Ok(parse_scalar(s, Unit::Bytes, line)?.round() as u64)
}

fn parse_time(s: &str, line: usize) -> Result<SimTime, ConfigError> {
    Ok(SimTime::from_micros(parse_scalar(s, Unit::Time, line)?.round() as u64))
}

fn parse_bandwidth(s: &str, line: usize) -> Result<u64, ConfigError> {
    let (num, suffix) = split_number(s.trim());
    let v: f64 = num.parse().map_err(|_| ConfigError {
        line,
        msg: format!("bad bandwidth {s:?}"),
    })?;
    let scale = match suffix {
        "bps" => 1.0,
        "kbps" | "Kbps" => 1e3,
        "Mbps" => 1e6,
        "Gbps" => 1e9,
        "" => return err(line, format!("missing unit (bps/kbps/Mbps/Gbps) in {s:?}")),
        _ => return err(line, format!("bad bandwidth unit {suffix:?}")),
    };
    let bps = (v * scale).round();
    if bps.is_nan() || bps < 1.0 {
        return err(line, "bandwidth must be positive");
    }
    Ok(bps as u64)
}

/// Either a fraction in [0, 1] or a percentage with a `%` suffix.
fn parse_fraction(s: &str, line: usize) -> Result<f64, ConfigError> {
    let s = s.trim();
    let (body, scale) = match s.strip_suffix('%') {
        Some(b) => (b.trim(), 0.01),
        None => (s, 1.0),
    };
    match body.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&(v * scale)) => Ok(v * scale),
        _ => err(line, format!("expected a fraction or percentage, got {s:?}")),
    }
}

fn parse_int<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, ConfigError> {
    s.trim().parse().map_err(|_| ConfigError {
        line,
        msg: format!("expected an integer, got {s:?}"),
    })
}

fn parse_bool(s: &str, line: usize) -> Result<bool, ConfigError> {
    match s.trim() {
        "1" | "true" | "on" | "yes" => Ok(true),
        "0" | "false" | "off" | "no" => Ok(false),
        other => err(line, format!("expected a boolean, got {other:?}")),
    }
}

fn parse_dist(s: &str, unit: Unit, line: usize) -> Result<Dist, ConfigError> {
    let s = s.trim();
    let args = |inner: &str| -> Result<Vec<f64>, ConfigError> {
        inner.split(',').map(|a| parse_scalar(a, unit, line)).collect()
    };
    let call = |name: &str| {
        s.strip_prefix(name)
            .and_then(|r| r.trim_start().strip_prefix('('))
            .and_then(|r| r.strip_suffix(')'))
    };
    let d = if let Some(inner) = call("uniform") {
        match args(inner)?[..] {
            [a, b] => Dist::Uniform(a, b),
            _ => return err(line, "uniform takes two arguments"),
        }
    } else if let Some(inner) = call("exponential") {
        match args(inner)?[..] {
            [m] => Dist::Exponential(m),
            _ => return err(line, "exponential takes one argument"),
        }
    } else if let Some(inner) = call("constant") {
        match args(inner)?[..] {
            [v] => Dist::Constant(v),
            _ => return err(line, "constant takes one argument"),
        }
    } else {
        Dist::Constant(parse_scalar(s, unit, line)?)
    };
    d.validate().map_err(|msg| ConfigError { line, msg })?;
    Ok(d)
}

/// Splits a per-flow list on whitespace outside parentheses.
fn split_list(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0i32;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if c.is_whitespace() && depth <= 0 {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if !(c.is_whitespace() && cur.ends_with(',')) {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Scenario,
    Bottleneck,
    Access,
    Background,
    Host(usize),
    App(usize, usize),
}

const SCENARIO_KEYS: &[&str] = &["name", "seed", "duration"];
const LINK_KEYS: &[&str] = &["bandwidth", "delay", "queue", "lossRate"];
const BACKGROUND_KEYS: &[&str] = &["enabled", "load", "packetSize"];
const HOST_KEYS: &[&str] = &[
    "localPort",
    "maxSegmentSize",
    "rcvBufferSize",
    "sndBufferSize",
    "ccCwndInit",
    "numRtmfpApps",
    "side",
    "rebindTime",
    "rebindPort",
    "dropOutgoing",
];
const APP_KEYS: &[&str] = &[
    "localEpd",
    "remoteAddress",
    "remotePort",
    "remoteEpd",
    "flowsOutgoing",
    "flowPacketSize",
    "flowSendInterval",
    "flowNumPackets",
    "flowTimeCritical",
    "flowId",
    "maxRuntime",
    "readDelay",
    "startTime",
];

impl Section {
    fn parse(name: &str, line: usize) -> Result<Section, ConfigError> {
        let parts: Vec<&str> = name.split('.').collect();
        let idx = |s: &str| parse_int::<usize>(s, line);
        Ok(match parts[..] {
            ["scenario"] => Section::Scenario,
            ["bottleneck"] => Section::Bottleneck,
            ["access"] => Section::Access,
            ["background"] => Section::Background,
            ["host", n] => Section::Host(idx(n)?),
            ["app", n, m] => Section::App(idx(n)?, idx(m)?),
            _ => return err(line, format!("unknown section [{name}]")),
        })
    }

    fn keys(&self) -> &'static [&'static str] {
        match self {
            Section::Scenario => SCENARIO_KEYS,
            Section::Bottleneck | Section::Access => LINK_KEYS,
            Section::Background => BACKGROUND_KEYS,
            Section::Host(_) => HOST_KEYS,
            Section::App(..) => APP_KEYS,
        }
    }
}

/// `**.udpApp[i].layer.key` and `**.udpApp[i].app[j].key` as emitted by the
/// original simulation's ini files. Host indices there are 0-based.
fn omnet_line(path: &str, line: usize) -> Result<(Section, String), ConfigError> {
    let bracket = |s: &str, prefix: &str| -> Option<usize> { s.strip_prefix(prefix)?.strip_suffix(']')?.parse().ok() };
    let parts: Vec<&str> = path.trim_start_matches("**.").split('.').collect();
    let host = parts
        .first()
        .and_then(|p| bracket(p, "udpApp["))
        .ok_or_else(|| ConfigError {
            line,
            msg: format!("unrecognised key path {path:?}"),
        })?;
    match parts[1..] {
        ["layer", key] | [key] => Ok((Section::Host(host + 1), key.to_string())),
        [app, key] => match bracket(app, "app[") {
            Some(j) => Ok((Section::App(host + 1, j), key.to_string())),
            None => err(line, format!("unrecognised key path {path:?}")),
        },
        _ => err(line, format!("unrecognised key path {path:?}")),
    }
}

type Entries = BTreeMap<Section, BTreeMap<String, (String, usize)>>;

fn collect(text: &str) -> Result<Entries, ConfigError> {
    let mut entries: Entries = BTreeMap::new();
    let mut section: Option<Section> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') || l.starts_with(';') || l == "..." {
            continue;
        }
        if let Some(name) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            section = Some(Section::parse(name.trim(), line)?);
            entries.entry(section.clone().expect("set")).or_default();
            continue;
        }
        let Some((k, v)) = l.split_once('=') else {
            return err(line, format!("expected `key = value`, got {l:?}"));
        };
        let (k, v) = (k.trim(), v.trim());
        let v = v
            .strip_prefix('"')
            .and_then(|r| r.strip_suffix('"'))
            .unwrap_or(v)
            .to_string();
        let (sec, key) = if k.starts_with("**.") {
            omnet_line(k, line)?
        } else {
            match &section {
                Some(s) => (s.clone(), k.to_string()),
                None => return err(line, format!("key {k:?} outside any section")),
            }
        };
        let key = if key == "ccWndInit" {
            "ccCwndInit".to_string()
        } else {
            key
        };
        if !sec.keys().contains(&key.as_str()) {
            return err(line, format!("unknown key {key:?}"));
        }
        entries.entry(sec).or_default().insert(key, (v, line));
    }
    Ok(entries)
}

fn link_section(base: LinkSpec, kv: &BTreeMap<String, (String, usize)>) -> Result<LinkSpec, ConfigError> {
    let mut l = base;
    for (k, (v, line)) in kv {
        let line = *line;
        match k.as_str() {
            "bandwidth" => l.bandwidth_bps = parse_bandwidth(v, line)?,
            "delay" => l.delay = parse_time(v, line)?,
            "queue" => l.queue_bytes = parse_bytes(v, line)? as usize,
            "lossRate" => l.loss_rate = parse_fraction(v, line)?,
            _ => unreachable!("key checked during collection"),
        }
    }
    Ok(l)
}

fn app_section(kv: &BTreeMap<String, (String, usize)>, header_line: usize) -> Result<AppConfig, ConfigError> {
    let get = |k: &str| kv.get(k).map(|(v, l)| (v.as_str(), *l));
    let mut app = AppConfig::default();
    let (epd, line) = get("localEpd").ok_or(ConfigError {
        line: header_line,
        msg: "app is missing localEpd".into(),
    })?;
    app.local_epd = parse_int(epd, line)?;
    if let Some((v, l)) = get("maxRuntime") {
        app.max_runtime = parse_time(v, l)?;
    }
    if let Some((v, l)) = get("readDelay") {
        app.read_delay = parse_time(v, l)?;
    }
    if let Some((v, l)) = get("startTime") {
        app.start_time = parse_time(v, l)?;
    }

    let remote_keys = ["remoteAddress", "remotePort", "remoteEpd"];
    let present: Vec<_> = remote_keys.iter().filter_map(|k| get(k)).collect();
    if !present.is_empty() {
        if present.len() != 3 {
            let line = present[0].1;
            return err(line, "remoteAddress, remotePort and remoteEpd must be given together");
        }
        let (host, _) = get("remoteAddress").expect("present");
        let (port, pl) = get("remotePort").expect("present");
        let (repd, el) = get("remoteEpd").expect("present");
        app.remote = Some(RemoteSpec {
            host: host.to_string(),
            port: parse_int(port, pl)?,
            epd: parse_int(repd, el)?,
        });
    }

    let n: usize = match get("flowsOutgoing") {
        Some((v, l)) => parse_int(v, l)?,
        None => 0,
    };
    let fl = get("flowsOutgoing").map_or(header_line, |(_, l)| l);
    let list = |key: &str, required: bool| -> Result<Option<(Vec<String>, usize)>, ConfigError> {
        match get(key) {
            None if required && n > 0 => err(fl, format!("flowsOutgoing = {n} but {key} is missing")),
            None => Ok(None),
            Some((v, l)) => {
                let items = split_list(v);
                if items.len() != n {
                    return err(l, format!("{key} lists {} values but flowsOutgoing = {n}", items.len()));
                }
                Ok(Some((items, l)))
            }
        }
    };
    let sizes = list("flowPacketSize", true)?;
    let intervals = list("flowSendInterval", true)?;
    let counts = list("flowNumPackets", true)?;
    let tc = list("flowTimeCritical", false)?;
    let ids = list("flowId", false)?;
    for i in 0..n {
        let item = |l: &Option<(Vec<String>, usize)>| l.as_ref().map(|(v, line)| (v[i].clone(), *line));
        let (s, sl) = item(&sizes).expect("required");
        let (iv, il) = item(&intervals).expect("required");
        let (c, cl) = item(&counts).expect("required");
        app.flows.push(FlowSpec {
            flow_id: match item(&ids) {
                Some((v, l)) => parse_int(&v, l)?,
                None => i as u16 + 1,
            },
            packet_size: parse_dist(&s, Unit::Bytes, sl)?,
            send_interval: parse_dist(&iv, Unit::Time, il)?,
            num_packets: parse_int(&c, cl)?,
            time_critical: match item(&tc) {
                Some((v, l)) => parse_bool(&v, l)?,
                None => false,
            },
        });
    }
    app.validate().map_err(|e| ConfigError {
        line: header_line,
        msg: e.to_string(),
    })?;
    Ok(app)
}

/// Parses the sectioned key-value scenario format.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let entries = collect(text)?;
    let mut cfg = ScenarioConfig::default();
    let first_line = |kv: &BTreeMap<String, (String, usize)>| kv.values().map(|(_, l)| *l).min().unwrap_or(0);

    for (sec, kv) in &entries {
        match sec {
            Section::Scenario => {
                for (k, (v, line)) in kv {
                    match k.as_str() {
                        "name" => cfg.name = v.clone(),
                        "seed" => cfg.seed = parse_int(v, *line)?,
                        "duration" => cfg.duration = parse_time(v, *line)?,
                        _ => unreachable!(),
                    }
                }
            }
            Section::Bottleneck => cfg.bottleneck = link_section(cfg.bottleneck, kv)?,
            Section::Access => cfg.access = link_section(cfg.access, kv)?,
            Section::Background => {
                for (k, (v, line)) in kv {
                    match k.as_str() {
                        "enabled" => cfg.background.enabled = parse_bool(v, *line)?,
                        "load" => cfg.background.load = parse_fraction(v, *line)?,
                        "packetSize" => cfg.background.packet_size = parse_dist(v, Unit::Bytes, *line)?,
                        _ => unreachable!(),
                    }
                }
            }
            Section::Host(n) => {
                if *n == 0 {
                    return err(first_line(kv), "hosts are numbered from 1");
                }
                let h = cfg.hosts.entry(*n).or_insert_with(|| HostConfig::new(*n));
                for (k, (v, line)) in kv {
                    let line = *line;
                    match k.as_str() {
                        "localPort" => h.local_port = parse_int(v, line)?,
                        "maxSegmentSize" => h.max_segment_size = parse_bytes(v, line)? as usize,
                        "rcvBufferSize" => h.rcv_buffer_size = parse_bytes(v, line)?,
                        "sndBufferSize" => h.snd_buffer_size = parse_bytes(v, line)?,
                        "ccCwndInit" => h.cwnd_init = parse_bytes(v, line)?,
                        "numRtmfpApps" => h.num_apps = Some(parse_int(v, line)?),
                        "side" => {
                            h.side = match v.as_str() {
                                "left" => Side::Left,
                                "right" => Side::Right,
                                other => return err(line, format!("side must be left or right, got {other:?}")),
                            }
                        }
                        "rebindTime" => {
                            let t = parse_time(v, line)?;
                            let port = h.rebind.map_or(h.local_port.wrapping_add(1), |(_, p)| p);
                            h.rebind = Some((t, port));
                        }
                        "rebindPort" => {
                            let p = parse_int(v, line)?;
                            h.rebind = Some((h.rebind.map_or(SimTime::MAX, |(t, _)| t), p));
                        }
                        "dropOutgoing" => {
                            h.drop_outgoing = split_list(v)
                                .iter()
                                .map(|s| parse_int(s, line))
                                .collect::<Result<_, _>>()?;
                        }
                        _ => unreachable!(),
                    }
                }
                if h.max_segment_size < 64 || h.max_segment_size > 1472 {
                    return err(first_line(kv), "maxSegmentSize must lie in [64, 1472] bytes");
                }
                if let Some((t, _)) = h.rebind {
                    if t == SimTime::MAX {
                        return err(first_line(kv), "rebindPort given without rebindTime");
                    }
                }
            }
            Section::App(n, m) => {
                let header = first_line(kv);
                if *n == 0 {
                    return err(header, "hosts are numbered from 1");
                }
                let app = app_section(kv, header)?;
                let h = cfg.hosts.entry(*n).or_insert_with(|| HostConfig::new(*n));
                h.apps.insert(*m, app);
            }
        }
    }

    for h in cfg.hosts.values() {
        if let Some(limit) = h.num_apps {
            if h.apps.len() > limit {
                return err(
                    0,
                    format!(
                        "{} configures {} apps but numRtmfpApps = {limit}",
                        h.name(),
                        h.apps.len()
                    ),
                );
            }
        }
        let mut epds = std::collections::BTreeSet::new();
        for a in h.apps.values() {
            if !epds.insert(a.local_epd) {
                return err(0, format!("{}: localEpd {} used twice", h.name(), a.local_epd));
            }
        }
    }
    if cfg.background.enabled && cfg.background.load >= 1.0 {
        return err(0, "background load must stay below the bottleneck capacity");
    }
    Ok(cfg)
}

/// Turns `section.key=value` into config text appended after the base config.
pub fn override_text(spec: &str) -> Result<String, ConfigError> {
    let Some((path, value)) = spec.split_once('=') else {
        return err(0, format!("override {spec:?} is not `section.key=value`"));
    };
    let path = path.trim();
    let Some((section, key)) = path.rsplit_once('.') else {
        return err(0, format!("override {spec:?} is missing a section"));
    };
    Ok(format!("\n[{section}]\n{key} = {}\n", value.trim()))
}
