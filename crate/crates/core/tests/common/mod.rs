#![allow(dead_code)]

use rtmfp_sim::harness::{parse_config, run_config, RunOutput, ScenarioConfig, SimOptions};

/// Two hosts across a 10 Mbit/s, 20 ms bottleneck; host1 sends one flow to host2.
pub fn pair(duration: &str, size: &str, interval: &str, count: u64, extra: &str) -> String {
    format!(
        r#"
[scenario]
name = pair
duration = {duration}

[bottleneck]
bandwidth = 10Mbps
delay = 20ms

[app.1.0]
localEpd = 10
remoteAddress = host2
remotePort = 4711
remoteEpd = 20
flowsOutgoing = 1
flowPacketSize = {size}
flowSendInterval = {interval}
flowNumPackets = {count}
flowId = 1

[app.2.0]
localEpd = 20
{extra}
"#
    )
}

pub fn config(text: &str) -> ScenarioConfig {
    parse_config(text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

pub fn run(text: &str, opts: SimOptions) -> RunOutput {
    run_config(config(text), opts).unwrap_or_else(|e| panic!("run failed: {e}"))
}

pub fn run_cfg(cfg: ScenarioConfig, opts: SimOptions) -> RunOutput {
    run_config(cfg, opts).unwrap_or_else(|e| panic!("run failed: {e}"))
}
