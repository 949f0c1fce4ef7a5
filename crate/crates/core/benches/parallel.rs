use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fading_cvqkd::channel::simulate_run_with;
use fading_cvqkd::clustering::OptimizeOptions;
use fading_cvqkd::estimation::estimate_run;
use fading_cvqkd::{optimize, Exec, ProtocolParams, TransmittanceDistribution};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn simulate_and_estimate(c: &mut Criterion) {
    let dist = TransmittanceDistribution::truncated_normal(0.5, 0.1).unwrap();
    let p = ProtocolParams::default();
    let mut g = c.benchmark_group("simulate_estimate_1e3x1e3");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let run = simulate_run_with(&dist, &p, 1000, 1000, 7, exec).unwrap();
                black_box(estimate_run(&run, exec).unwrap())
            })
        });
    }
    g.finish();
}

fn optimize_grid(c: &mut Criterion) {
    let dist = TransmittanceDistribution::uniform(0.0, 1.0).unwrap();
    let p = ProtocolParams::default();
    let mut g = c.benchmark_group("optimize_c2");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = OptimizeOptions { grid_points: 6, exec, ..OptimizeOptions::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(optimize(&dist, 2, 1000, 1000.0, &p, &opts).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, simulate_and_estimate, optimize_grid);
criterion_main!(benches);
