use cpf_bench::bench_scene;
use criterion::{criterion_group, criterion_main, Criterion};
use cpf_core::cloud::fps_downsample;
use cpf_core::patching::mean_curvature;
use std::hint::black_box;

fn bench_fps(c: &mut Criterion) {
    let scene = bench_scene(16_384);
    let mut group = c.benchmark_group("fps_downsample");
    group.sample_size(10);
    group.bench_function("16384_to_2048", |b| {
        b.iter(|| black_box(fps_downsample(&scene.cloud, 2048, 0).unwrap()));
    });
    group.finish();
}

fn bench_curvature(c: &mut Criterion) {
    let scene = bench_scene(8192);
    let mut group = c.benchmark_group("mean_curvature");
    group.sample_size(10);
    group.bench_function("8192_k30", |b| {
        b.iter(|| black_box(mean_curvature(&scene.cloud, 30).unwrap()));
    });
    group.finish();
}

criterion_group!(benches, bench_fps, bench_curvature);
criterion_main!(benches);
