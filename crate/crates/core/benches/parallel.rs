use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dccda_core::estimator::HyperParams;
use dccda_core::oracle::verify::{random_batch, verify_monte_carlo, verify_variance_ordering_batch, BatchConfig};
use dccda_core::par::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn verification_batch(c: &mut Criterion) {
    let batch = random_batch(&BatchConfig::new(24, 7), Execution::Sequential).unwrap();
    let mut group = c.benchmark_group("variance-ordering-batch");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| verify_variance_ordering_batch(&batch, 1e-9, exec).unwrap())
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let batch = random_batch(&BatchConfig::new(12, 11), Execution::Sequential).unwrap();
    let inst = &batch[11];
    let params = HyperParams::default();
    let mut group = c.benchmark_group("sampled-variance-40k");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| verify_monte_carlo(inst, 40_000, 3, 4.0, &params, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, verification_batch, monte_carlo);
criterion_main!(benches);
