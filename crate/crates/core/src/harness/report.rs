use std::io::{Read, Write};

use super::sim::{CwndRow, ResultRow, Summary};
use super::{jain_index, HarnessError};
use crate::app::Direction;

pub const RESULTS_HEADER: [&str; 14] = [
    "scenario",
    "seed",
    "host",
    "app",
    "flow_id",
    "direction",
    "msgs_sent",
    "msgs_recv",
    "bytes_sent",
    "bytes_recv",
    "retransmissions",
    "start_us",
    "end_us",
    "goodput_bps",
];

pub const CWND_HEADER: [&str; 6] = ["time_us", "host", "session", "cwnd_bytes", "flight_bytes", "mode"];

pub const SUMMARY_HEADER: [&str; 8] = [
    "scenario",
    "seed",
    "flows",
    "jain_index",
    "bottleneck_utilization",
    "aggregate_goodput_bps",
    "bdp_bound_bps",
    "theory_rtt_us",
];

fn opt_us(t: Option<crate::netsim::SimTime>) -> String {
    t.map_or(String::new(), |t| t.as_micros().to_string())
}

pub fn write_results<W: Write>(w: W, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULTS_HEADER)?;
    for r in rows {
        let s = &r.stats;
        out.write_record([
            r.scenario.clone(),
            r.seed.to_string(),
            r.host.clone(),
            r.app.to_string(),
            s.flow_id.to_string(),
            s.direction.as_str().to_string(),
            s.msgs_sent.to_string(),
            s.msgs_recv.to_string(),
            s.bytes_sent.to_string(),
            s.bytes_recv.to_string(),
            s.retransmissions.to_string(),
            opt_us(s.first_activity),
            opt_us(s.last_activity),
            format!("{:.3}", s.goodput_bps()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_cwnd<W: Write>(w: W, rows: &[CwndRow]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CWND_HEADER)?;
    for r in rows {
        out.write_record([
            r.time.as_micros().to_string(),
            r.host.clone(),
            format!("{:08x}", r.session),
            r.cwnd.to_string(),
            r.flight.to_string(),
            r.mode.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(w: W, rows: &[Summary]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for s in rows {
        out.write_record([
            s.scenario.clone(),
            s.seed.to_string(),
            s.flows.to_string(),
            s.jain_index.map_or(String::new(), |j| format!("{j:.6}")),
            format!("{:.6}", s.utilization),
            format!("{:.3}", s.aggregate_goodput_bps),
            format!("{:.3}", s.bdp_bound_bps),
            s.theory_rtt.as_micros().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// The subset of a results row needed to recompute summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredRow {
    pub scenario: String,
    pub seed: u64,
    pub host: String,
    pub flow_id: u16,
    pub direction: Direction,
    pub goodput_bps: f64,
}

pub fn read_results<R: Read>(r: R) -> Result<Vec<StoredRow>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(HarnessError::BadResults("unexpected header row".into()));
    }
    let bad = |what: &str, line: usize| HarnessError::BadResults(format!("record {line}: bad {what}"));
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        rows.push(StoredRow {
            scenario: rec[0].to_string(),
            seed: rec[1].parse().map_err(|_| bad("seed", line))?,
            host: rec[2].to_string(),
            flow_id: rec[4].parse().map_err(|_| bad("flow_id", line))?,
            direction: match &rec[5] {
                "send" => Direction::Send,
                "recv" => Direction::Recv,
                _ => return Err(bad("direction", line)),
            },
            goodput_bps: rec[13].parse().map_err(|_| bad("goodput_bps", line))?,
        });
    }
    Ok(rows)
}

/// Per (scenario, seed): receive-flow count, Jain index and aggregate goodput
/// from whole-run goodputs.
pub fn summarize_results(rows: &[StoredRow]) -> Vec<(String, u64, usize, Option<f64>, f64)> {
    let mut groups: std::collections::BTreeMap<(String, u64), Vec<f64>> = Default::default();
    for r in rows.iter().filter(|r| r.direction == Direction::Recv) {
        groups
            .entry((r.scenario.clone(), r.seed))
            .or_default()
            .push(r.goodput_bps);
    }
    groups
        .into_iter()
        .map(|((sc, seed), xs)| {
            let jain = if xs.len() >= 2 { jain_index(&xs).ok() } else { None };
            (sc, seed, xs.len(), jain, xs.iter().sum())
        })
        .collect()
}
