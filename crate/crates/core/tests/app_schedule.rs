mod common;

use rtmfp_sim::harness::SimOptions;
use rtmfp_sim::netsim::{Dist, SimRng, SimTime};

use common::{pair, run};

#[test]
fn constant_schedule_is_exact() {
    let r = run(&pair("5s", "500byte", "10ms", 100, ""), SimOptions::default());
    let send = r.send_rows().next().unwrap();
    assert_eq!(send.stats.msgs_sent, 100);
    let (a, b) = (send.stats.first_activity.unwrap(), send.stats.last_activity.unwrap());
    assert_eq!(b - a, SimTime::from_millis(990));
    let recv = r.recv_rows().next().unwrap();
    assert_eq!(recv.stats.msgs_recv, 100);
    assert_eq!(recv.stats.bytes_recv, 50_000);
}

#[test]
fn exponential_gaps_have_the_configured_mean() {
    let mut rng = SimRng::new(3);
    let d = Dist::Exponential(2000.0);
    let n = 200_000;
    let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
    assert!((mean / 2000.0 - 1.0).abs() < 0.01, "mean {mean}");
}

#[test]
fn exponential_schedule_matches_count() {
    let r = run(
        &pair("10s", "200byte", "exponential(5ms)", 500, ""),
        SimOptions::default(),
    );
    let send = r.send_rows().next().unwrap();
    let span = send.stats.last_activity.unwrap() - send.stats.first_activity.unwrap();
    // 499 gaps of mean 5 ms; five standard errors either side
    let expect = 499.0 * 5e-3;
    let sd = 5e-3 * (499f64).sqrt();
    assert!((span.as_secs_f64() - expect).abs() < 5.0 * sd, "span {span}");
    assert_eq!(r.recv_rows().next().unwrap().stats.msgs_recv, 500);
}

#[test]
fn late_start_delays_first_send() {
    let r = run(
        &pair("5s", "500byte", "10ms", 10, "[app.1.0]\nstartTime = 2s\n"),
        SimOptions::default(),
    );
    let send = r.send_rows().next().unwrap();
    assert!(send.stats.first_activity.unwrap() >= SimTime::from_secs(2));
}
