use std::fmt;
use std::str::FromStr;

use super::batch::Job;
use super::config::{override_text, parse_config};
use super::sim::SimOptions;
use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Preset {
    BottleneckBasic,
    BdpSweep,
    FairnessSimultaneous,
    FairnessStaggered,
    BundlingSweep,
    LossSweep,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::BottleneckBasic,
        Preset::BdpSweep,
        Preset::FairnessSimultaneous,
        Preset::FairnessStaggered,
        Preset::BundlingSweep,
        Preset::LossSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::BottleneckBasic => "bottleneck-basic",
            Preset::BdpSweep => "bdp-sweep",
            Preset::FairnessSimultaneous => "fairness-simultaneous",
            Preset::FairnessStaggered => "fairness-staggered",
            Preset::BundlingSweep => "bundling-sweep",
            Preset::LossSweep => "loss-sweep",
        }
    }

    fn template(self) -> &'static str {
        match self {
            Preset::BottleneckBasic => BOTTLENECK_BASIC,
            Preset::BdpSweep => BDP_SWEEP,
            Preset::FairnessSimultaneous => FAIRNESS,
            Preset::FairnessStaggered => FAIRNESS_STAGGERED,
            Preset::BundlingSweep => BUNDLING_SWEEP,
            Preset::LossSweep => LOSS_SWEEP,
        }
    }

    /// The swept key and its values; presets without a sweep run once.
    pub fn sweep(self) -> Option<(&'static str, &'static [&'static str])> {
        match self {
            Preset::BdpSweep => Some(("bottleneck.delay", &["0ms", "10ms", "25ms", "50ms", "100ms"])),
            Preset::BundlingSweep => Some((
                "app.1.0.flowPacketSize",
                &["50byte", "140byte", "500byte", "1000byte", "1450byte"],
            )),
            Preset::LossSweep => Some(("bottleneck.lossRate", &["0%", "0.1%", "0.5%", "1%", "2%", "5%"])),
            _ => None,
        }
    }

    /// Sweep points as config text: template, then user overrides, then the swept value.
    pub fn points(self, overrides: &[String]) -> Result<Vec<SweepPoint>, HarnessError> {
        let mut base = self.template().to_string();
        for o in overrides {
            base.push_str(&override_text(o)?);
        }
        Ok(match self.sweep() {
            None => vec![SweepPoint {
                label: self.name().to_string(),
                text: base,
            }],
            Some((key, values)) => {
                let short = key.rsplit('.').next().expect("non-empty");
                values
                    .iter()
                    .map(|v| {
                        let label = format!("{}/{short}={v}", self.name());
                        let mut text = base.clone();
                        text.push_str(&override_text(&format!("{key}={v}")).expect("well-formed"));
                        text.push_str(&format!("\n[scenario]\nname = {label}\n"));
                        SweepPoint { label, text }
                    })
                    .collect()
            }
        })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| HarnessError::UnknownPreset(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepPoint {
    pub label: String,
    pub text: String,
}

/// One job per (sweep point, seed), in that order.
pub fn preset_jobs(
    preset: Preset,
    seeds: &[u64],
    overrides: &[String],
    opts: SimOptions,
) -> Result<Vec<Job>, HarnessError> {
    let mut jobs = Vec::new();
    for p in preset.points(overrides)? {
        let cfg = parse_config(&p.text)?;
        for &seed in seeds {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            jobs.push(Job { config: cfg, opts });
        }
    }
    Ok(jobs)
}

const BOTTLENECK_BASIC: &str = r#"
[scenario]
name = bottleneck-basic
duration = 10s

[bottleneck]
bandwidth = 10Mbps
delay = 20ms

[background]
enabled = 1
load = 5%

# HOST 1
**.udpApp[0].numRtmfpApps = 2
**.udpApp[0].layer.localPort = 4711
**.udpApp[0].layer.maxSegmentSize = 1472byte
**.udpApp[0].layer.rcvBufferSize = 65536byte
**.udpApp[0].layer.ccWndInit = 4380byte

# APP 0
**.udpApp[0].app[0].localEpd = 4712
**.udpApp[0].app[0].remoteAddress = "host2"
**.udpApp[0].app[0].remotePort = 2013
**.udpApp[0].app[0].remoteEpd = 2014

**.udpApp[0].app[0].flowsOutgoing = 2
**.udpApp[0].app[0].flowPacketSize = "140byte 140byte"
**.udpApp[0].app[0].flowSendInterval = "1000us 1000us"
**.udpApp[0].app[0].flowNumPackets = "500000 500000"
**.udpApp[0].app[0].flowTimeCritical = "1 1"
**.udpApp[0].app[0].flowId = "19 88"
**.udpApp[0].app[0].maxRuntime = 1800s
**.udpApp[0].app[0].readDelay = 0ms

[host.2]
localPort = 2013

[app.2.0]
localEpd = 2014
"#;

const BDP_SWEEP: &str = r#"
[scenario]
name = bdp-sweep
duration = 20s

[bottleneck]
bandwidth = 100Mbps
delay = 0ms

[host.1]
rcvBufferSize = 65536byte

[app.1.0]
localEpd = 10
remoteAddress = host2
remotePort = 4711
remoteEpd = 20
flowsOutgoing = 1
flowPacketSize = 1450byte
flowSendInterval = 100us
flowNumPackets = 100000000
flowId = 1

[host.2]
rcvBufferSize = 65536byte

[app.2.0]
localEpd = 20
"#;

const FAIRNESS: &str = r#"
[scenario]
name = fairness-simultaneous
duration = 60s

[bottleneck]
bandwidth = 10Mbps
delay = 20ms

[background]
enabled = 1
load = 5%

[app.1.0]
localEpd = 10
remoteAddress = host2
remotePort = 4711
remoteEpd = 20
flowsOutgoing = 1
flowPacketSize = 1450byte
flowSendInterval = 500us
flowNumPackets = 100000000
flowId = 1

[app.2.0]
localEpd = 20

[app.3.0]
localEpd = 30
remoteAddress = host4
remotePort = 4711
remoteEpd = 40
flowsOutgoing = 1
flowPacketSize = 1450byte
flowSendInterval = 500us
flowNumPackets = 100000000
flowId = 1

[app.4.0]
localEpd = 40
"#;

const FAIRNESS_STAGGERED: &str = r#"
[scenario]
name = fairness-staggered
duration = 60s

[bottleneck]
bandwidth = 10Mbps
delay = 20ms

[background]
enabled = 1
load = 5%

[app.1.0]
localEpd = 10
remoteAddress = host2
remotePort = 4711
remoteEpd = 20
flowsOutgoing = 1
flowPacketSize = 1450byte
flowSendInterval = 500us
flowNumPackets = 100000000
flowId = 1

[app.2.0]
localEpd = 20

[app.3.0]
localEpd = 30
remoteAddress = host4
remotePort = 4711
remoteEpd = 40
flowsOutgoing = 1
flowPacketSize = 1450byte
flowSendInterval = 500us
flowNumPackets = 100000000
flowId = 1
startTime = 10s

[app.4.0]
localEpd = 40
"#;

const BUNDLING_SWEEP: &str = r#"
[scenario]
name = bundling-sweep
duration = 20s

[bottleneck]
bandwidth = 10Mbps
delay = 20ms
queue = 1MiB

[app.1.0]
localEpd = 10
remoteAddress = host2
remotePort = 4711
remoteEpd = 20
flowsOutgoing = 1
flowPacketSize = 140byte
flowSendInterval = 20us
flowNumPackets = 100000000
flowId = 1

[app.2.0]
localEpd = 20
"#;

const LOSS_SWEEP: &str = r#"
[scenario]
name = loss-sweep
duration = 30s

[bottleneck]
bandwidth = 10Mbps
delay = 20ms

[app.1.0]
localEpd = 10
remoteAddress = host2
remotePort = 4711
remoteEpd = 20
flowsOutgoing = 1
flowPacketSize = 1450byte
flowSendInterval = 500us
flowNumPackets = 100000000
flowId = 1

[app.2.0]
localEpd = 20
"#;
