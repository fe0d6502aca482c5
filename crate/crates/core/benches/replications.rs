use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tsdensity::calibrate::{simulate_statistics, Calibrator, StatisticSpec};
use tsdensity::density::{estimate_many, Method, ProcedureConfig};
use tsdensity::exec::Execution;
use tsdensity::testbeds::{sample, TestBed};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn fits(c: &mut Criterion) {
    let samples: Vec<_> = (0..64).map(|i| sample(TestBed::N5Claw, 1000, i).unwrap()).collect();
    let config = ProcedureConfig::new(Method::Kolmogorov);
    let cal = Calibrator::new();
    let mut g = c.benchmark_group("kolmogorov_fits");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::new(name, samples.len()), |b| {
            b.iter(|| estimate_many(black_box(&samples), &config, &cal, mode))
        });
    }
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let mut g = c.benchmark_group("kuiper_statistics");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::new(name, 500), |b| {
            b.iter(|| simulate_statistics(StatisticSpec::kuiper(19), black_box(500), 500, 1, mode))
        });
    }
    g.finish();
}

criterion_group!(benches, fits, calibration);
criterion_main!(benches);
