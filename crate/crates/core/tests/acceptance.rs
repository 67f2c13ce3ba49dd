//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rtmfp_sim::cc::CcMode;
use rtmfp_sim::engine::{ProtocolEvent, RetransmitCause};
use rtmfp_sim::harness::{preset_jobs, write_cwnd, write_results, write_summary, Preset, RunOutput, SimOptions};
use rtmfp_sim::netsim::SimTime;
use rtmfp_sim::wire::{AckChunk, Chunk, DataChunk, Fragment, IHello, IIKeying, Packet, PacketMode, RHello, RIKeying};

use common::{config, pair, run, run_cfg};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn preset_runs(preset: Preset, seed: u64, overrides: &[&str], opts: SimOptions) -> Vec<RunOutput> {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    preset_jobs(preset, &[seed], &overrides, opts)
        .expect("preset builds")
        .iter()
        .map(|j| j.run().expect("preset runs"))
        .collect()
}

fn recv_steady(r: &RunOutput, host: &str) -> f64 {
    r.recv_rows()
        .filter(|row| row.host == host)
        .map(|row| row.steady_goodput_bps)
        .sum()
}

fn delivered(r: &RunOutput) -> u64 {
    r.recv_rows().map(|row| row.stats.msgs_recv).sum()
}

// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let render = || {
        let opts = SimOptions {
            trace: true,
            cwnd: true,
            events: false,
        };
        let runs = preset_runs(Preset::BottleneckBasic, 7, &[], opts);
        let mut results = Vec::new();
        let mut cwnd = Vec::new();
        let mut summary = Vec::new();
        let mut trace = Vec::new();
        let rows: Vec<_> = runs.iter().flat_map(|r| r.rows.clone()).collect();
        write_results(&mut results, &rows).unwrap();
        let cw: Vec<_> = runs.iter().flat_map(|r| r.cwnd.clone()).collect();
        write_cwnd(&mut cwnd, &cw).unwrap();
        let sums: Vec<_> = runs.iter().map(|r| r.summary.clone()).collect();
        write_summary(&mut summary, &sums).unwrap();
        for r in &runs {
            r.trace.write_to(&mut trace).unwrap();
        }
        (results, cwnd, summary, trace)
    };
    let a = render();
    let b = render();
    let total = a.0.len() + a.1.len() + a.2.len() + a.3.len();
    ensure(
        a == b && a.3.len() > 1000,
        format!("{total} output bytes, identical={}", a == b),
    )
}

fn arb_chunk() -> impl Strategy<Value = Chunk> {
    let cookie = proptest::collection::vec(any::<u8>(), 64).prop_map(|v| {
        let mut c = [0u8; 64];
        c.copy_from_slice(&v);
        c
    });
    let frag = prop_oneof![
        Just(Fragment::Whole),
        Just(Fragment::First),
        Just(Fragment::Middle),
        Just(Fragment::Last)
    ];
    let gaps = (0u32..1_000_000, proptest::collection::vec((1u32..40, 0u32..40), 0..6)).prop_map(|(cum, steps)| {
        let mut floor = cum + 1;
        let mut out = Vec::new();
        for (skip, len) in steps {
            let a = floor + skip;
            out.push((a, a + len));
            floor = a + len + 2;
        }
        (cum, out)
    });
    prop_oneof![
        (any::<u32>(), any::<u32>()).prop_map(|(target_epd, tag)| Chunk::IHello(IHello { target_epd, tag })),
        (any::<u32>(), cookie.clone()).prop_map(|(tag, cookie)| Chunk::RHello(RHello { tag, cookie })),
        (any::<u32>(), any::<u32>(), any::<u32>(), cookie).prop_map(|(s, e, r, cookie)| {
            Chunk::IIKeying(IIKeying {
                initiator_session: s,
                initiator_epd: e,
                rcv_buffer: r,
                cookie,
            })
        }),
        (any::<u32>(), any::<u32>()).prop_map(|(s, r)| Chunk::RIKeying(RIKeying {
            responder_session: s,
            rcv_buffer: r
        })),
        (
            any::<u16>(),
            any::<u32>(),
            frag,
            any::<bool>(),
            proptest::collection::vec(any::<u8>(), 1..300)
        )
            .prop_map(|(flow_id, seq, frag, time_critical, payload)| Chunk::Data(DataChunk {
                flow_id,
                seq,
                frag,
                time_critical,
                payload
            })),
        (any::<u16>(), gaps, any::<u32>()).prop_map(|(flow_id, (cum_ack, gaps), adv_buffer)| {
            Chunk::Ack(AckChunk {
                flow_id,
                cum_ack,
                gaps,
                adv_buffer,
            })
        }),
        Just(Chunk::Close),
    ]
}

fn arb_packet() -> impl Strategy<Value = Packet> {
    (
        any::<u32>(),
        any::<bool>(),
        any::<bool>(),
        any::<u32>(),
        proptest::collection::vec(arb_chunk(), 1..8),
    )
        .prop_map(|(session_id, est, time_critical, timestamp, chunks)| Packet {
            session_id,
            mode: if est {
                PacketMode::Established
            } else {
                PacketMode::Handshake
            },
            time_critical,
            timestamp,
            chunks,
        })
}

/// Header arithmetic written out per chunk type.
fn expected_size(p: &Packet) -> usize {
    let body = |c: &Chunk| match c {
        Chunk::IHello(_) => 4,
        Chunk::RHello(_) => 64,
        Chunk::IIKeying(_) => 4 + 4 + 64,
        Chunk::RIKeying(_) => 4,
        Chunk::Data(d) => d.payload.len(),
        Chunk::Ack(a) => 4 + a.gaps.len() * (4 + 4),
        Chunk::Close => 0,
    };
    12 + p.chunks.iter().map(|c| 10 + body(c)).sum::<usize>()
}

fn codec() -> Outcome {
    const CASES: u32 = 10_000;
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&arb_packet(), |p| {
            let bytes = p.encode(usize::MAX).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(bytes.len(), expected_size(&p));
            let back = Packet::decode(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(back, p);
            Ok(())
        })
        .map(|()| format!("{CASES} packets round-trip with exact sizes"))
        .map_err(|e| e.to_string())
}

fn handshake() -> Outcome {
    let text = pair("3s", "500byte", "10ms", 100, "");
    let clean = run(&text, SimOptions::default());
    let before = clean.packets_before_first_data;
    let hs_clean: u64 = clean.hosts.iter().map(|h| h.packets.handshake_packets).sum();

    let lossy = run(
        &pair("5s", "500byte", "10ms", 100, "[host.1]\ndropOutgoing = 1\n"),
        SimOptions::default(),
    );
    let hs: u64 = lossy.hosts.iter().map(|h| h.packets.handshake_packets).sum();
    let opened: u64 = lossy.hosts.iter().map(|h| h.counters.sessions_opened).sum();
    ensure(
        before == Some(4) && hs_clean == 4 && opened == 2 && hs == 5 && delivered(&lossy) == 100,
        format!(
            "clean: {before:?} before data; first IHello dropped: {hs} handshake packets, {opened} sessions opened"
        ),
    )
}

fn reliability() -> Outcome {
    let runs = preset_runs(
        Preset::LossSweep,
        1,
        &["app.1.0.flowPacketSize=140byte", "app.1.0.flowNumPackets=10000"],
        SimOptions::default(),
    );
    let r = runs
        .iter()
        .find(|r| r.config.name.ends_with("lossRate=2%"))
        .ok_or("no 2% point")?;
    let recv = r.recv_rows().next().ok_or("no receiver row")?;
    let send = r.send_rows().next().ok_or("no sender row")?;
    let dropped = r.bottleneck.0.dropped() + r.bottleneck.1.dropped();
    ensure(
        recv.stats.msgs_recv == 10_000 && recv.stats.out_of_order == 0 && recv.stats.digest == send.stats.digest,
        format!(
            "{} delivered, {} out of order, digests equal={}, {dropped} bottleneck drops, {} retransmissions",
            recv.stats.msgs_recv,
            recv.stats.out_of_order,
            recv.stats.digest == send.stats.digest,
            send.stats.retransmissions
        ),
    )
}

fn ack_cadence() -> Outcome {
    let r = run(&pair("15s", "140byte", "1ms", 10_000, ""), SimOptions::default());
    let data = r.host("host1").ok_or("no host1")?.packets.data_packets;
    let acks = r.host("host2").ok_or("no host2")?.packets.ack_chunks;
    let expect = data.div_ceil(2);
    ensure(
        acks.abs_diff(expect) <= 2 && delivered(&r) == 10_000,
        format!("{data} data packets, {acks} acks, expected {expect}±2"),
    )
}

fn retransmit_trigger() -> Outcome {
    let r = run(
        &pair("5s", "1000byte", "10ms", 200, "[host.1]\ndropOutgoing = 20\n"),
        SimOptions::all(),
    );
    let mut detected = None;
    let mut resent = Vec::new();
    for (t, host, ev) in &r.events {
        if host != "host1" {
            continue;
        }
        match ev {
            ProtocolEvent::LossDetected {
                seq,
                reports,
                rto_deadline,
                ..
            } if *reports == 3 && detected.is_none() => detected = Some((*t, *seq, *rto_deadline)),
            ProtocolEvent::Retransmit { seq, cause, .. } => resent.push((*t, *seq, *cause)),
            ProtocolEvent::Timeout { .. } => return Err(format!("timeout at {t}")),
            _ => {}
        }
    }
    let (t, seq, deadline) = detected.ok_or("no loss detection")?;
    let deadline = deadline.ok_or("no RTO armed")?;
    ensure(
        resent == vec![(t, seq, RetransmitCause::LossReports)] && t < deadline && delivered(&r) == 200,
        format!("seq {seq} detected and resent at {t}, RTO due {deadline}, retransmits {resent:?}"),
    )
}

/// Receive-window bound from first principles for a 100 Mbit/s link.
fn window_bound(delay_ms: f64) -> f64 {
    let rate = 100e6;
    let rtt = 2.0 * delay_ms / 1e3 + 1472.0 * 8.0 / rate + 26.0 * 8.0 / rate;
    (65536.0 * 8.0 / rtt).min(rate)
}

fn flow_control() -> Outcome {
    let runs = preset_runs(Preset::BdpSweep, 1, &[], SimOptions::default());
    let mut ok = true;
    let mut parts = Vec::new();
    for delay in [10.0, 25.0, 50.0, 100.0] {
        let name = format!("bdp-sweep/delay={delay}ms");
        let r = runs
            .iter()
            .find(|r| r.config.name == name)
            .ok_or(format!("missing {name}"))?;
        let g = recv_steady(r, "host2");
        let bound = window_bound(delay);
        ok &= g <= bound && g >= 0.9 * bound;
        parts.push(format!("{delay}ms {:.2}/{:.2} Mbps", g / 1e6, bound / 1e6));
    }
    ensure(ok, parts.join(", "))
}

fn jain(xs: &[f64]) -> f64 {
    let s: f64 = xs.iter().sum();
    let q: f64 = xs.iter().map(|x| x * x).sum();
    s * s / (xs.len() as f64 * q)
}

fn fairness() -> Outcome {
    let sim = &preset_runs(Preset::FairnessSimultaneous, 1, &[], SimOptions::default())[0];
    let g = [recv_steady(sim, "host2"), recv_steady(sim, "host4")];
    let j = jain(&g);

    let stag = &preset_runs(Preset::FairnessStaggered, 1, &[], SimOptions::default())[0];
    let from = SimTime::from_secs(40);
    let to = SimTime::from_secs(60);
    let window = |host: &str| -> f64 {
        stag.recv_rows()
            .filter(|r| r.host == host)
            .map(|r| r.stats.window_goodput_bps(from, to))
            .sum()
    };
    let (first, second) = (window("host2"), window("host4"));
    let share = second / (first + second);
    ensure(
        j >= 0.95 && share >= 0.4,
        format!(
            "simultaneous {:.2}/{:.2} Mbps jain {j:.4}; staggered late share {share:.3}",
            g[0] / 1e6,
            g[1] / 1e6
        ),
    )
}

fn bundling() -> Outcome {
    let runs = preset_runs(Preset::BundlingSweep, 1, &[], SimOptions::default());
    let goodputs: Vec<f64> = runs.iter().map(|r| recv_steady(r, "host2")).collect();
    let increasing = goodputs.windows(2).all(|w| w[1] > w[0]);
    let r140 = runs
        .iter()
        .find(|r| r.config.name.ends_with("flowPacketSize=140byte"))
        .ok_or("no 140 B point")?;
    // A packet is full when one more 140-byte chunk would not fit.
    let (mut packets, mut chunks) = (0u64, 0u64);
    for (&(bytes, n), &count) in &r140.host("host1").ok_or("no host1")?.packets.data_packet_shapes {
        if bytes + 10 + 140 > 1472 {
            packets += count;
            chunks += n as u64 * count;
        }
    }
    let analytic = (1472 - 12) / (10 + 140);
    let mean = chunks as f64 / packets.max(1) as f64;
    ensure(
        increasing && packets > 0 && mean == analytic as f64,
        format!(
            "goodput Mbps {:?}; 140 B: {mean:.3} chunks per full packet over {packets} packets, analytic {analytic}",
            goodputs.iter().map(|g| (g / 1e4).round() / 100.0).collect::<Vec<_>>()
        ),
    )
}

fn mode_asymmetry() -> Outcome {
    let text = r#"
[scenario]
name = modes
duration = 30s

[bottleneck]
bandwidth = 10Mbps
delay = 20ms

[host.2]
rcvBufferSize = 1MiB

[app.1.0]
localEpd = 10
remoteAddress = host2
remotePort = 4711
remoteEpd = 20
flowsOutgoing = 1
flowPacketSize = 1450byte
flowSendInterval = 100us
flowNumPackets = 100000000
flowTimeCritical = 1
flowId = 1

[app.1.1]
localEpd = 11
remoteAddress = host2
remotePort = 4711
remoteEpd = 21
flowsOutgoing = 1
flowPacketSize = 1450byte
flowSendInterval = 100us
flowNumPackets = 100000000
flowId = 2

[app.2.0]
localEpd = 20

[app.2.1]
localEpd = 21
"#;
    let r = run(
        text,
        SimOptions {
            cwnd: true,
            ..SimOptions::default()
        },
    );
    let by_flow = |id: u16| -> f64 {
        r.recv_rows()
            .filter(|row| row.stats.flow_id == id)
            .map(|row| row.steady_goodput_bps)
            .sum()
    };
    let (tc, other) = (by_flow(1), by_flow(2));
    let deferring = r.cwnd.iter().any(|c| c.host == "host1" && c.mode == CcMode::Deferring);
    ensure(
        deferring && tc >= 1.5 * other,
        format!(
            "time-critical {:.2} Mbps, deferring {:.2} Mbps, ratio {:.2}",
            tc / 1e6,
            other / 1e6,
            tc / other.max(1.0)
        ),
    )
}

fn loss_impact() -> Outcome {
    let runs = preset_runs(Preset::LossSweep, 1, &[], SimOptions::default());
    let mut goodputs = Vec::new();
    for rate in ["0%", "0.5%", "1%", "2%", "5%"] {
        let name = format!("loss-sweep/lossRate={rate}");
        let r = runs
            .iter()
            .find(|r| r.config.name == name)
            .ok_or(format!("missing {name}"))?;
        goodputs.push(recv_steady(r, "host2"));
    }
    ensure(
        goodputs.windows(2).all(|w| w[1] < w[0]),
        format!(
            "Mbps at 0/0.5/1/2/5%: {:?}",
            goodputs.iter().map(|g| (g / 1e4).round() / 100.0).collect::<Vec<_>>()
        ),
    )
}

fn mobility() -> Outcome {
    let base = pair("20s", "1000byte", "5ms", 2000, "");
    let moved = pair(
        "20s",
        "1000byte",
        "5ms",
        2000,
        "[host.1]\nrebindTime = 5s\nrebindPort = 5000\n",
    );
    let a = run(&base, SimOptions::default());
    let b = run(&moved, SimOptions::default());
    let total = |r: &RunOutput, f: fn(&rtmfp_sim::harness::HostReport) -> u64| -> u64 { r.hosts.iter().map(f).sum() };
    let opened = (
        total(&a, |h| h.counters.sessions_opened),
        total(&b, |h| h.counters.sessions_opened),
    );
    let hs = (
        total(&a, |h| h.packets.handshake_packets),
        total(&b, |h| h.packets.handshake_packets),
    );
    let moves = total(&b, |h| h.counters.mobility_events);
    ensure(
        delivered(&a) == delivered(&b) && delivered(&b) == 2000 && opened.0 == opened.1 && hs.0 == hs.1 && moves >= 1,
        format!(
            "delivered {} vs {}, sessions opened {opened:?}, handshake packets {hs:?}, {moves} address changes seen",
            delivered(&a),
            delivered(&b)
        ),
    )
}

/// Multiplicative decreases of host1's cwnd outside retransmission timeouts.
fn loss_drops(r: &RunOutput) -> Vec<(u64, u64)> {
    let timeouts: Vec<SimTime> = r
        .events
        .iter()
        .filter(|(_, h, e)| h == "host1" && matches!(e, ProtocolEvent::Timeout { .. }))
        .map(|(t, _, _)| *t)
        .collect();
    let mut last: BTreeMap<u32, u64> = BTreeMap::new();
    let mut drops = Vec::new();
    for c in r.cwnd.iter().filter(|c| c.host == "host1") {
        if let Some(&prev) = last.get(&c.session) {
            if c.cwnd < prev && !timeouts.contains(&c.time) {
                drops.push((prev, c.cwnd));
            }
        }
        last.insert(c.session, c.cwnd);
    }
    drops
}

fn cwnd_dynamics() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (tc, factor) in [(false, 0.5), (true, 0.875)] {
        let extra = format!(
            "[host.2]\nrcvBufferSize = 1MiB\n\n[app.1.0]\nflowTimeCritical = {}\n",
            tc as u8
        );
        let r = run_cfg(
            config(&pair("30s", "1450byte", "100us", 100_000_000, &extra)),
            SimOptions {
                cwnd: true,
                events: true,
                trace: false,
            },
        );
        let drops = loss_drops(&r);
        // Drops clamped at the window floor carry no information about the factor.
        let free: Vec<f64> = drops
            .iter()
            .filter(|&&(prev, _)| prev as f64 * factor >= 2920.0)
            .map(|&(prev, new)| new as f64 / prev as f64)
            .collect();
        let within = free.iter().filter(|x| (*x / factor - 1.0).abs() <= 0.01).count();
        ok &= free.len() >= 3 && within == free.len();
        let (lo, hi) = free
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        parts.push(format!(
            "{}: {} drops, {within} within 1% of {factor} (range {lo:.4}..{hi:.4})",
            if tc { "time-critical" } else { "normal" },
            free.len()
        ));
    }
    ensure(ok, parts.join("; "))
}

fn main() {
    let checks: [Check; 13] = [
        ("determinism", determinism),
        ("codec round trip", codec),
        ("four-way handshake", handshake),
        ("reliability under loss", reliability),
        ("ack cadence", ack_cadence),
        ("retransmit on third loss report", retransmit_trigger),
        ("flow control bound", flow_control),
        ("fairness", fairness),
        ("bundling", bundling),
        ("mode asymmetry", mode_asymmetry),
        ("loss impact", loss_impact),
        ("mobility", mobility),
        ("cwnd dynamics", cwnd_dynamics),
    ];
    let results: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = checks
            .iter()
            .map(|&(_, f)| {
                s.spawn(move || {
                    std::panic::catch_unwind(f).unwrap_or_else(|p| {
                        Err(p
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "panicked".into()))
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("joined")).collect()
    });
    let mut failed = 0;
    for (i, ((name, _), res)) in checks.iter().zip(&results).enumerate() {
        match res {
            Ok(d) => println!("PASS [{}] {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL [{}] {name}: {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
