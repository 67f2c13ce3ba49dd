use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rtmfp_sim::harness::{
    parse_config, preset_jobs, read_results, run_batch, summarize_results, write_cwnd, write_results, write_summary,
    HarnessError, Job, Preset, RunOutput, SimOptions,
};

#[derive(Parser)]
#[command(name = "rtmfp-sim", version, about = "Discrete-event RTMFP simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a built-in experiment.
    Preset {
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// `section.key=value`, applied before the sweep variable.
        #[arg(long = "override")]
        overrides: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Run every sweep point for each of these seeds, e.g. `1,2,3` or `1..8`.
        #[arg(long)]
        matrix: Option<String>,
    },
    /// Recompute fairness and aggregate tables from an output directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::BadResults(format!("bad seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn write_outputs(out: &Path, trace: Option<&Path>, runs: &[RunOutput]) -> Result<(), HarnessError> {
    fs::create_dir_all(out)?;
    let rows: Vec<_> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    write_results(BufWriter::new(File::create(out.join("results.csv"))?), &rows)?;
    let cwnd: Vec<_> = runs.iter().flat_map(|r| r.cwnd.iter().cloned()).collect();
    write_cwnd(BufWriter::new(File::create(out.join("cwnd.csv"))?), &cwnd)?;
    let summaries: Vec<_> = runs.iter().map(|r| r.summary.clone()).collect();
    write_summary(BufWriter::new(File::create(out.join("summary.csv"))?), &summaries)?;
    if let Some(path) = trace {
        let mut w = BufWriter::new(File::create(path)?);
        for r in runs {
            if runs.len() > 1 {
                writeln!(w, "# {} seed {}", r.config.name, r.config.seed)?;
            }
            r.trace.write_to(&mut w)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn execute(jobs: Vec<Job>, out: &Path, trace: Option<&Path>) -> Result<(), HarnessError> {
    let mut runs = Vec::with_capacity(jobs.len());
    for r in run_batch(&jobs) {
        runs.push(r?);
    }
    write_outputs(out, trace, &runs)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    for r in &runs {
        let s = &r.summary;
        writeln!(
            w,
            "{} seed={} flows={} goodput={:.0}bps jain={} util={:.3}",
            s.scenario,
            s.seed,
            s.flows,
            s.aggregate_goodput_bps,
            s.jain_index.map_or("-".to_string(), |j| format!("{j:.4}")),
            s.utilization
        )?;
    }
    Ok(())
}

fn real_main(cli: Cli) -> Result<(), HarnessError> {
    match cli.cmd {
        Cmd::Run {
            config,
            seed,
            trace,
            out,
        } => {
            let text = fs::read_to_string(&config)?;
            let mut cfg = parse_config(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let opts = SimOptions {
                trace: trace.is_some(),
                cwnd: true,
                events: false,
            };
            execute(vec![Job { config: cfg, opts }], &out, trace.as_deref())
        }
        Cmd::Preset {
            name,
            seed,
            overrides,
            out,
            trace,
            matrix,
        } => {
            let preset: Preset = name.parse()?;
            let seeds = match matrix {
                Some(m) => parse_seeds(&m)?,
                None => vec![seed],
            };
            let opts = SimOptions {
                trace: trace.is_some(),
                cwnd: true,
                events: false,
            };
            let jobs = preset_jobs(preset, &seeds, &overrides, opts)?;
            execute(jobs, &out, trace.as_deref())
        }
        Cmd::Report { out } => {
            let rows = read_results(File::open(out.join("results.csv"))?)?;
            let mut w = csv::Writer::from_path(out.join("report.csv"))?;
            w.write_record(["scenario", "seed", "recv_flows", "jain_index", "aggregate_goodput_bps"])?;
            for (sc, seed, n, jain, total) in summarize_results(&rows) {
                let jain = jain.map_or(String::new(), |j| format!("{j:.6}"));
                println!("{sc} seed={seed} flows={n} jain={jain} goodput={total:.0}bps");
                w.write_record([sc, seed.to_string(), n.to_string(), jain, format!("{total:.3}")])?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
