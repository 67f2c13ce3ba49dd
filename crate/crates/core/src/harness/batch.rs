use super::config::ScenarioConfig;
use super::sim::{run_config, RunOutput, SimOptions};
use super::HarnessError;

/// One fully isolated simulation run.
#[derive(Clone, Debug)]
pub struct Job {
    pub config: ScenarioConfig,
    pub opts: SimOptions,
}

impl Job {
    pub fn run(&self) -> Result<RunOutput, HarnessError> {
        run_config(self.config.clone(), self.opts)
    }
}

pub fn run_batch_sequential(jobs: &[Job]) -> Vec<Result<RunOutput, HarnessError>> {
    jobs.iter().map(Job::run).collect()
}

/// Runs jobs on the rayon pool; results come back in job order.
#[cfg(feature = "parallel")]
pub fn run_batch_parallel(jobs: &[Job]) -> Vec<Result<RunOutput, HarnessError>> {
    use rayon::prelude::*;
    jobs.par_iter().map(Job::run).collect()
}

pub fn run_batch(jobs: &[Job]) -> Vec<Result<RunOutput, HarnessError>> {
    #[cfg(feature = "parallel")]
    {
        run_batch_parallel(jobs)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_batch_sequential(jobs)
    }
}
