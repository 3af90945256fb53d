//! Parallel against sequential execution of a batch of short runs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use relu_gf::harness::{execute, ExperimentConfig};
use relu_gf::parallel::{map_jobs, map_seq};

fn batch() -> Vec<ExperimentConfig> {
    (0..8)
        .map(|seed| {
            let mut c = ExperimentConfig::default();
            c.init_seed = seed;
            c.flow.t_max = 20.0;
            c.flow.snapshot_stride = 1000;
            c.analyze = false;
            c
        })
        .collect()
}

fn t_end(c: &ExperimentConfig) -> f64 {
    execute(c).expect("short run").trajectory.end_time()
}

fn compare(cr: &mut Criterion) {
    let configs = batch();
    let mut g = cr.benchmark_group("batch_of_8");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("map", "seq"), |b| b.iter(|| map_seq(&configs, t_end)));
    g.bench_function(BenchmarkId::new("map", "jobs"), |b| b.iter(|| map_jobs(&configs, None, t_end)));
    g.finish();
}

criterion_group!(benches, compare);
criterion_main!(benches);
