use rtmfp_sim::harness::parse_config;
use rtmfp_sim::netsim::{Dist, SimTime};

const OMNET: &str = r#"
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
"#;

#[test]
fn omnet_block_maps_to_host_one() {
    let cfg = parse_config(OMNET).unwrap();
    let h = &cfg.hosts[&1];
    assert_eq!(h.local_port, 4711);
    assert_eq!(h.max_segment_size, 1472);
    assert_eq!(h.rcv_buffer_size, 65536);
    assert_eq!(h.cwnd_init, 4380);
    assert_eq!(h.apps.len(), 1);
    let app = &h.apps[&0];
    assert_eq!(app.local_epd, 4712);
    let remote = app.remote.as_ref().unwrap();
    assert_eq!((remote.host.as_str(), remote.port, remote.epd), ("host2", 2013, 2014));
    assert_eq!(app.flows.len(), 2);
    assert_eq!(app.flows.iter().map(|f| f.flow_id).collect::<Vec<_>>(), [19, 88]);
    assert!(app.flows.iter().all(|f| f.time_critical && f.num_packets == 500_000));
    assert_eq!(app.flows[0].packet_size, Dist::Constant(140.0));
    assert_eq!(app.flows[1].send_interval, Dist::Constant(1000.0));
    assert_eq!(app.max_runtime, SimTime::from_secs(1800));
}

#[test]
fn list_length_mismatch_names_the_line() {
    let text = OMNET.replace("\"140byte 140byte\"", "\"140byte\"");
    let line = text.lines().position(|l| l.contains("flowPacketSize")).unwrap() + 1;
    let e = parse_config(&text).unwrap_err();
    assert_eq!(e.line, line, "{e}");
}

#[test]
fn missing_unit_is_rejected() {
    let e = parse_config("[bottleneck]\nbandwidth = 10\n").unwrap_err();
    assert_eq!(e.line, 2);
}

#[test]
fn distributions_and_units() {
    let cfg = parse_config(
        "[app.1.0]\nlocalEpd = 1\nremoteAddress = host2\nremotePort = 4711\nremoteEpd = 2\nflowsOutgoing = 2\n\
         flowPacketSize = uniform(100byte, 200byte) 1KiB\nflowSendInterval = exponential(2ms) 1s\nflowNumPackets = 3 4\n",
    )
    .unwrap();
    let flows = &cfg.hosts[&1].apps[&0].flows;
    assert_eq!(flows[0].packet_size, Dist::Uniform(100.0, 200.0));
    assert_eq!(flows[1].packet_size, Dist::Constant(1024.0));
    assert_eq!(flows[0].send_interval, Dist::Exponential(2000.0));
    assert_eq!(flows[1].send_interval, Dist::Constant(1e6));
}

#[test]
fn too_many_apps_for_declared_count() {
    let text = "[host.1]\nnumRtmfpApps = 1\n[app.1.0]\nlocalEpd = 1\n[app.1.1]\nlocalEpd = 2\n";
    assert!(parse_config(text).is_err());
}
