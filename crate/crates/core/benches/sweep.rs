use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rtmfp_sim::harness::{preset_jobs, run_batch_parallel, run_batch_sequential, Job, Preset, SimOptions};

fn jobs(preset: Preset) -> Vec<Job> {
    let overrides = ["scenario.duration=5s".to_string()];
    preset_jobs(preset, &[1, 2], &overrides, SimOptions::default()).expect("preset builds")
}

fn sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    for preset in [Preset::LossSweep, Preset::BdpSweep, Preset::BundlingSweep] {
        let jobs = jobs(preset);
        g.bench_with_input(BenchmarkId::new("sequential", preset), &jobs, |b, jobs| {
            b.iter(|| black_box(run_batch_sequential(jobs)))
        });
        g.bench_with_input(BenchmarkId::new("parallel", preset), &jobs, |b, jobs| {
            b.iter(|| black_box(run_batch_parallel(jobs)))
        });
    }
    g.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
