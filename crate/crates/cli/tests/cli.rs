use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rtmfp-sim"))
}

const SCENARIO: &str = r#"
[scenario]
name = cli
duration = 3s

[background]
enabled = 1

[app.1.0]
localEpd = 10
remoteAddress = host2
remotePort = 4711
remoteEpd = 20
flowsOutgoing = 1
flowPacketSize = 1000byte
flowSendInterval = 5ms
flowNumPackets = 200
flowId = 1

[app.2.0]
localEpd = 20
"#;

fn run_into(dir: &Path, cfg: &Path) {
    let status = bin()
        .args(["run", "--seed", "3", "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(dir)
        .arg("--trace")
        .arg(dir.join("trace.log"))
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn repeated_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.ini");
    fs::write(&cfg, SCENARIO).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_into(&a, &cfg);
    run_into(&b, &cfg);
    for f in ["results.csv", "cwnd.csv", "summary.csv", "trace.log"] {
        let x = fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert!(results.starts_with("scenario,seed,host,app,flow_id,direction,"));
}

#[test]
fn report_recomputes_from_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s.ini");
    fs::write(&cfg, SCENARIO).unwrap();
    run_into(tmp.path(), &cfg);
    let out = bin().args(["report", "--out"]).arg(tmp.path()).output().unwrap();
    assert!(out.status.success());
    let report = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
}

#[test]
fn bad_config_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.ini");
    fs::write(&cfg, "[bottleneck]\nbandwidth = fast\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn unknown_preset_exits_with_one() {
    let out = bin().args(["preset", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
