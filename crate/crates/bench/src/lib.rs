//! Shared helpers for the criterion benchmarks.

use cpf_core::cloud::{Scene, SceneSpec, RandomSceneParams};

/// A mid-size mixed scene for sampling benchmarks.
pub fn bench_scene(points: usize) -> Scene {
    let spec = SceneSpec::random(
        1,
        &RandomSceneParams { n_primitives: 8, small_count: 2, ..Default::default() },
    );
    cpf_core::synthesize_scene(&spec, points, 5e-3).expect("bench scene")
}
