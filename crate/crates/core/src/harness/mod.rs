//! Scenario harness: config parsing, the dumbbell topology, canned presets,
//! fairness metrics and CSV output.

mod batch;
mod config;
mod presets;
mod report;
mod sim;

use thiserror::Error;

use crate::netsim::SimError;

#[cfg(feature = "parallel")]
pub use batch::run_batch_parallel;
pub use batch::{run_batch, run_batch_sequential, Job};
pub use config::{
    override_text, parse_config, BackgroundSpec, ConfigError, HostConfig, LinkSpec, ScenarioConfig, Side,
};
pub use presets::{preset_jobs, Preset, SweepPoint};
pub use report::{
    read_results, summarize_results, write_cwnd, write_results, write_summary, CWND_HEADER, RESULTS_HEADER,
    SUMMARY_HEADER,
};
pub use sim::{
    bdp_bound_bps, run_config, theory_rtt, CwndRow, HostReport, PacketStats, ResultRow, RunOutput, SimOptions,
    Simulation, Summary,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("simulation error: {0}")]
    Sim(#[from] SimError),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invariant violations: {}", .0.join("; "))]
    Violations(Vec<String>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad results file: {0}")]
    BadResults(String),
}

impl HarnessError {
    /// Process exit code: 1 for bad input, 2 for a failed runtime check.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Sim(_) | HarnessError::Violations(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("fairness needs at least one flow")]
pub struct NoFlows;

/// Jain's index (Σx)² / (n·Σx²). All-zero input counts as perfectly fair.
pub fn jain_index(xs: &[f64]) -> Result<f64, NoFlows> {
    if xs.is_empty() {
        return Err(NoFlows);
    }
    let sum: f64 = xs.iter().sum();
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return Ok(1.0);
    }
    Ok(sum * sum / (xs.len() as f64 * sq))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[5.0, 5.0]).unwrap(), 1.0);
        assert_eq!(jain_index(&[5.0, 0.0]).unwrap(), 0.5);
        assert!((jain_index(&[3.0, 1.0]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(jain_index(&[]), Err(NoFlows));
    }
}
