use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cpf_core::merge::{exact_merge, greedy_merge, random_instance, ExactLimits};
use std::hint::black_box;

fn bench_greedy(c: &mut Criterion) {
    let mut group = c.benchmark_group("greedy_merge");
    for columns in [8usize, 12, 16] {
        let instances: Vec<_> = (0..32).map(|i| random_instance(i, columns)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(columns), &instances, |b, instances| {
            let mut i = 0usize;
            b.iter(|| {
                let (matrix, scopes) = &instances[i % instances.len()];
                i += 1;
                black_box(greedy_merge(matrix, scopes))
            });
        });
    }
    group.finish();
}

fn bench_exact(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_merge");
    group.sample_size(10);
    for columns in [8usize, 12] {
        let instances: Vec<_> = (0..8).map(|i| random_instance(i, columns)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(columns), &instances, |b, instances| {
            let mut i = 0usize;
            b.iter(|| {
                let (matrix, scopes) = &instances[i % instances.len()];
                i += 1;
                black_box(exact_merge(matrix, scopes, &ExactLimits::default()))
            });
        });
    }
    group.finish();
}

criterion_group!(benches, bench_greedy, bench_exact);
criterion_main!(benches);
