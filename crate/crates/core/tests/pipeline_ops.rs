//! Cross-module integration tests: sampling quality, stage isolation,
//! ablation directions, metric file round trips, and property-based
//! invariants.

mod common;

use common::*;
use cpf_core::cloud::{
    fps_downsample, io as cloud_io, synthesize_scene, PointCloud, RandomSceneParams, SceneSpec,
};
use cpf_core::math::Vec3;
use cpf_core::merge::{finalize, greedy_merge, intersections, stack, FinalLabeling};
use cpf_core::metrics::{evaluate, match_primitives, ScaleBucket, SuiteAggregator};
use cpf_core::pipeline::{
    run_pipeline, segment_global, segment_patch, select_patches, PipelineConfig, SegmenterChoice,
};
use cpf_core::primitive::{Primitive, PrimitiveKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn min_pairwise_distance(points: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min((points[i] - points[j]).norm_squared());
        }
    }
    best.sqrt()
}

/// The furthest-point subset spreads better than random subsets: its minimum
/// pairwise distance beats that of 20 random subsets of the same size.
#[test]
fn fps_spreads_better_than_random_subsets() {
    let spec = SceneSpec::random(
        17,
        &RandomSceneParams { n_primitives: 6, ..Default::default() },
    );
    let scene = synthesize_scene(&spec, 16_384, 0.0).unwrap();
    let selected = fps_downsample(&scene.cloud, 1024, 0).unwrap();
    let fps_points: Vec<Vec3> = selected.iter().map(|&i| scene.cloud.points[i]).collect();
    let fps_min = min_pairwise_distance(&fps_points);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..20 {
        let mut pool: Vec<usize> = (0..scene.cloud.len()).collect();
        for i in 0..1024 {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let random_points: Vec<Vec3> =
            pool[..1024].iter().map(|&i| scene.cloud.points[i]).collect();
        let random_min = min_pairwise_distance(&random_points);
        assert!(
            fps_min >= random_min,
            "trial {trial}: fps min {fps_min} < random min {random_min}"
        );
    }
}

/// Running the pipeline equals chaining its stages with the same seeds.
#[test]
fn stage_isolation_matches_full_run() {
    let spec = SceneSpec::random(
        23,
        &RandomSceneParams { n_primitives: 6, small_count: 2, ..Default::default() },
    );
    let scene = synthesize_scene(&spec, 8192, 2e-3).unwrap();
    let config = PipelineConfig {
        downsample_points: 2048,
        max_patches: 8,
        seed: 71,
        ..PipelineConfig::default()
    };
    let full = run_pipeline(&config, &scene, None).unwrap();

    // Chain the stages by hand.
    let global = segment_global(&config, &scene).unwrap();
    let selection = select_patches(&config, &scene).unwrap();
    let mut segs = Vec::new();
    for (i, patch) in selection.sampling.patches.iter().enumerate() {
        segs.push(segment_patch(&config, &scene, i, patch).unwrap());
    }
    segs.push(global);
    let stacked = stack(segs).unwrap();
    let inter = intersections(&stacked);
    let grouping = greedy_merge(&inter, &stacked.column_scope);
    let labeling = finalize(&stacked, &grouping, &scene.cloud.points).unwrap();

    assert_eq!(labeling.labels, full.labeling.labels);
    assert_eq!(labeling.types, full.labeling.types);
    assert_eq!(grouping.groups, full.grouping.groups);
}

/// Patch selection focuses the patch budget: with the same cap, the selected
/// variant's smallest-bucket mIoU is at least the uniform variant's.
#[test]
fn patch_selection_beats_uniform_on_small_bucket() {
    let mut selected_agg = SuiteAggregator::default();
    let mut uniform_agg = SuiteAggregator::default();
    for i in 0..6u64 {
        let spec = small_feature_spec(900 + i, 6, 0.007);
        let scene = synthesize_scene(&spec, 16_384, 5e-3).unwrap();
        let base = PipelineConfig {
            downsample_points: 2048,
            max_patches: 4,
            seed: 40 + i,
            global_segmenter: SegmenterChoice::Ransac,
            local_segmenter: SegmenterChoice::Ransac,
            ..PipelineConfig::default()
        };
        let with_selection = run_pipeline(&base, &scene, None).unwrap();
        selected_agg.add(
            &format!("scene{i}"),
            with_selection.report.unwrap(),
            with_selection.records,
        );
        let uniform_config =
            PipelineConfig { use_patch_selection: false, ..base.clone() };
        let uniform = run_pipeline(&uniform_config, &scene, None).unwrap();
        uniform_agg.add(&format!("scene{i}"), uniform.report.unwrap(), uniform.records);
    }
    let bucket = |agg: &SuiteAggregator| -> f64 {
        agg.summary()
            .per_scale_miou_pct
            .iter()
            .find(|(b, _)| *b == ScaleBucket::Under1)
            .and_then(|(_, v)| *v)
            .unwrap_or(0.0)
    };
    let selected = bucket(&selected_agg);
    let uniform = bucket(&uniform_agg);
    assert!(
        selected + 1e-9 >= uniform,
        "selection {selected:.2}% must not trail uniform {uniform:.2}%"
    );
}

/// A predicted plane offset by 0.015 from the ground-truth plane covers no
/// surface samples at eps = 0.01 and all of them at eps = 0.02.
#[test]
fn offset_plane_coverage_steps_between_epsilons() {
    let spec = SceneSpec {
        seed: 3,
        surfaces: vec![cpf_core::cloud::TrimmedSurface::Rect {
            center: Vec3::new(0.0, 0.0, 0.2),
            u: Vec3::new(1.0, 0.0, 0.0),
            v: Vec3::new(0.0, 1.0, 0.0),
            half_u: 1.0,
            half_v: 1.0,
        }],
    };
    let scene = synthesize_scene(&spec, 1024, 0.0).unwrap();
    let (normal, offset) = match scene.primitives[0].analytic {
        Primitive::Plane { normal, offset } => (normal, offset),
        _ => unreachable!(),
    };
    let shifted = Primitive::Plane { normal, offset: offset + 0.015 };
    let n = scene.cloud.len();
    let labeling = FinalLabeling::from_channels(
        vec![0; n],
        vec![PrimitiveKind::Plane; n],
        scene.cloud.normals.clone().unwrap(),
        vec![Some(shifted)],
    );
    let (report, _) = evaluate(&scene, &labeling, &[0.01, 0.02]).unwrap();
    assert_eq!(report.sk_coverage_pct[0], (0.01, Some(0.0)));
    assert_eq!(report.sk_coverage_pct[1], (0.02, Some(100.0)));
    // The residual is the offset itself.
    assert!((report.sk_residual_mean.unwrap() - 0.015).abs() < 1e-12);
}

/// Per-bucket means are recomputable from the emitted per-primitive CSV.
#[test]
fn per_scale_buckets_recompute_from_csv() {
    let mut agg = SuiteAggregator::default();
    for seed in 0..3u64 {
        let spec = SceneSpec::random(
            600 + seed,
            &RandomSceneParams { n_primitives: 6, small_count: 2, ..Default::default() },
        );
        let scene = synthesize_scene(&spec, 8192, 2e-3).unwrap();
        let config = PipelineConfig {
            downsample_points: 2048,
            max_patches: 8,
            seed,
            oracle: cpf_core::pipeline::OracleConfig {
                flip_rate: 0.08,
                temperature: 0.0,
                normal_jitter_deg: 0.0,
            },
            ..PipelineConfig::default()
        };
        let out = run_pipeline(&config, &scene, None).unwrap();
        agg.add(&format!("scene{seed}"), out.report.unwrap(), out.records);
    }
    let csv = agg.per_primitive_csv();
    // Recompute bucket means from the dump alone.
    let mut sums: std::collections::BTreeMap<String, (f64, usize)> = Default::default();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let bucket = fields[4].to_string();
        let iou: f64 = fields[6].parse().unwrap();
        let entry = sums.entry(bucket).or_insert((0.0, 0));
        entry.0 += iou;
        entry.1 += 1;
    }
    for (bucket, value) in agg.summary().per_scale_miou_pct {
        let recomputed = sums
            .get(bucket.label())
            .map(|&(sum, count)| 100.0 * sum / count as f64);
        match (value, recomputed) {
            (Some(v), Some(r)) => assert!((v - r).abs() < 1e-9, "{}: {v} vs {r}", bucket.label()),
            (None, None) => {}
            other => panic!("bucket {} mismatch: {other:?}", bucket.label()),
        }
    }
}

/// mIoU hits 100 exactly when the labelings agree up to a permutation.
#[test]
fn miou_100_iff_permutation() {
    let gt: Vec<i32> = (0..120).map(|i| i % 5).collect();
    let permuted: Vec<i32> = gt.iter().map(|&l| [3, 0, 4, 1, 2][l as usize]).collect();
    let m = match_primitives(&permuted, &gt);
    let miou: f64 = m.per_gt_iou().iter().sum::<f64>() / 5.0;
    assert_eq!(miou, 1.0);
    // Breaking one point off destroys exactness.
    let mut broken = permuted;
    broken[0] = 4;
    let m = match_primitives(&broken, &gt);
    let miou: f64 = m.per_gt_iou().iter().sum::<f64>() / 5.0;
    assert!(miou < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Lossless cloud file round trip over arbitrary channel combinations.
    #[test]
    fn cloud_file_round_trip(
        points in prop::collection::vec(
            (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            1..60
        ),
        with_normals in any::<bool>(),
        with_labels in any::<bool>(),
        with_types in any::<bool>(),
        direction_seed in any::<u64>(),
    ) {
        let n = points.len();
        let mut rng = ChaCha8Rng::seed_from_u64(direction_seed);
        let cloud = PointCloud {
            points: points.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect(),
            normals: with_normals.then(|| {
                (0..n).map(|_| random_unit(&mut rng)).collect()
            }),
            gt_label: (with_normals && with_labels)
                .then(|| (0..n).map(|i| (i % 7) as i32 - 1).collect()),
            gt_type: (with_normals && with_labels && with_types).then(|| {
                (0..n)
                    .map(|i| PrimitiveKind::from_tag((i % 4) as u8).unwrap())
                    .collect()
            }),
        };
        let bytes = cloud_io::cloud_to_bytes(&cloud).unwrap();
        let back = cloud_io::cloud_from_bytes(&bytes).unwrap();
        prop_assert_eq!(back, cloud);
    }

    /// Relabeling predictions never changes the matched mIoU total.
    #[test]
    fn matching_total_is_permutation_invariant(
        labels in prop::collection::vec(0i32..6, 30..120),
        perm_seed in any::<u64>(),
    ) {
        let gt: Vec<i32> = labels.iter().map(|&l| (l + 1) % 6).collect();
        let base = match_primitives(&labels, &gt);
        let base_total: f64 = base.pairs.iter().map(|&(p, g)| base.iou[p][g]).sum();
        let mut perm: Vec<i32> = (0..6).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let relabeled: Vec<i32> = labels.iter().map(|&l| perm[l as usize]).collect();
        let moved = match_primitives(&relabeled, &gt);
        let moved_total: f64 = moved.pairs.iter().map(|&(p, g)| moved.iou[p][g]).sum();
        prop_assert!((base_total - moved_total).abs() < 1e-9);
    }
}
