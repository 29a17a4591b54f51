use amc_core::ensemble::{even_checkpoints, simulate_ensemble, Drive, EnsembleSpec};
use amc_core::par::Execution;
use amc_core::sde::SdeParams;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn ensemble(c: &mut Criterion) {
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for paths in [1_000, 10_000] {
        let spec = EnsembleSpec {
            params: SdeParams::default(),
            drive: Drive::constant(0.5, 0.1),
            c0: 0.0,
            paths,
            checkpoints: even_checkpoints(500, 10),
            keep_samples: false,
            seed: 1,
        };
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, paths), &spec, |b, spec| {
                b.iter(|| simulate_ensemble(black_box(spec), exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ensemble);
criterion_main!(benches);
