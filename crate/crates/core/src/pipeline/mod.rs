//! End-to-end orchestration: global pass on the high-resolution cloud,
//! heatmap on the downsample, pool binarization, covering patches, local
//! passes on normalized patches, stacking, greedy merging, finalization, and
//! evaluation — with ablation toggles and a provenance log per stage.

mod config;

pub use config::{HeatmapMode, OracleConfig, PipelineConfig, RansacConfig, SegmenterChoice};

use crate::cloud::{fps_downsample, Scene};
use crate::math::{derive_seed, fnv1a64};
use crate::merge::{
    finalize, greedy_merge, intersections, stack, FinalLabeling, MergeGrouping,
};
use crate::metrics::{evaluate, EvalReport, PerPrimitiveRecord, SuiteAggregator};
use crate::patching::{
    binarize_and_pool, curvature_heatmap, gt_scale_heatmap, normalize_patch,
    sample_covering_patches, Patch,
};
use crate::segmenters::{
    oracle_segment, ransac_segment, RansacParams, Scope, SoftSegmentation,
};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Cloud(#[from] crate::cloud::CloudError),
    #[error(transparent)]
    Patch(#[from] crate::patching::PatchError),
    #[error("global segmentation failed: {0}")]
    GlobalSegmenter(crate::segmenters::SegmenterError),
    #[error(transparent)]
    Merge(#[from] crate::merge::MergeError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("output write failed: {0}")]
    Output(String),
}

/// Everything a pipeline run produces.
#[derive(Debug)]
pub struct PipelineOutput {
    pub labeling: FinalLabeling,
    pub report: Option<EvalReport>,
    pub records: Vec<PerPrimitiveRecord>,
    pub grouping: MergeGrouping,
    pub column_scope: Vec<Scope>,
    pub n_patches: usize,
    pub pool_size: usize,
    pub uncovered_pool: usize,
    pub skipped_patches: Vec<(usize, String)>,
    pub provenance: Vec<String>,
}

/// Worker count for the patch-level pool: the `CPF_WORKERS` environment
/// variable when set, otherwise the machine's parallelism.
fn worker_count() -> usize {
    std::env::var("CPF_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

/// The pipeline's global pass, exposed so stage-by-stage runs derive the
/// same seeds as `run_pipeline`.
pub fn segment_global(
    config: &PipelineConfig,
    scene: &Scene,
) -> Result<SoftSegmentation, PipelineError> {
    let n = scene.cloud.len();
    let scope: Vec<usize> = (0..n).collect();
    let seed = derive_seed(config.seed, "global-seg", 0);
    match config.global_segmenter {
        SegmenterChoice::Oracle => oracle_segment(
            Scope::Global,
            &scope,
            scene,
            &config.oracle.corruption(),
            config.k_glob,
            seed,
        )
        .map_err(PipelineError::GlobalSegmenter),
        SegmenterChoice::Ransac => {
            let normals = scene
                .cloud
                .normals
                .as_ref()
                .ok_or_else(|| PipelineError::BadConfig("ransac needs normals".into()))?;
            let params = RansacParams {
                max_dist: config.ransac.max_dist,
                min_inliers: ((config.ransac.min_inlier_frac_global * n as f64).round() as usize)
                    .max(3),
                normal_thresh_deg: config.ransac.normal_thresh_deg,
                max_candidates: config.ransac.candidates,
                k_max: config.k_glob,
                score_subsample: config.ransac.score_subsample,
                seed,
            };
            ransac_segment(Scope::Global, &scope, &scene.cloud.points, normals, n, &params)
                .map_err(PipelineError::GlobalSegmenter)
        }
    }
}

/// The pipeline's local pass for one patch (normalization included).
pub fn segment_patch(
    config: &PipelineConfig,
    scene: &Scene,
    patch_index: usize,
    patch: &Patch,
) -> Result<SoftSegmentation, crate::segmenters::SegmenterError> {
    let seed = derive_seed(config.seed, "patch-seg", patch_index as u64);
    match config.local_segmenter {
        SegmenterChoice::Oracle => oracle_segment(
            Scope::Patch(patch_index),
            &patch.member_indices,
            scene,
            &config.oracle.corruption(),
            config.k_loc,
            seed,
        ),
        SegmenterChoice::Ransac => {
            let (points, normals, transform) = normalize_patch(patch, &scene.cloud)
                .map_err(|e| crate::segmenters::SegmenterError::BadParameter(e.to_string()))?;
            let normals =
                normals.ok_or(crate::segmenters::SegmenterError::MissingNormals)?;
            let params = RansacParams {
                // Thresholds live in world units; the patch frame divides
                // lengths by the patch scale.
                max_dist: config.ransac.max_dist / transform.scale,
                min_inliers: ((config.ransac.min_inlier_frac_local * points.len() as f64).round()
                    as usize)
                    .max(3),
                normal_thresh_deg: config.ransac.normal_thresh_deg,
                max_candidates: config.ransac.candidates,
                k_max: config.k_loc,
                score_subsample: config.ransac.score_subsample,
                seed,
            };
            let mut seg = ransac_segment(
                Scope::Patch(patch_index),
                &patch.member_indices,
                &points,
                &normals,
                scene.cloud.len(),
                &params,
            )?;
            // Report segment primitives in world coordinates.
            if let Some(prims) = seg.segment_primitives.as_mut() {
                for p in prims.iter_mut() {
                    *p = transform.primitive_to_world(p);
                }
            }
            Ok(seg)
        }
    }
}

/// Pool and covering-patch selection for a scene: FPS downsample, heatmap
/// (or the uniform ablation), binarization, covering patches. Shared by
/// `run_pipeline` and stage-by-stage runs so both derive identical patches.
#[derive(Debug)]
pub struct PatchSelection {
    pub fps_indices: Vec<usize>,
    /// Pool indices into the downsampled cloud.
    pub pool: Vec<usize>,
    pub patch_size: usize,
    pub sampling: crate::patching::PatchSampling,
}

pub fn select_patches(
    config: &PipelineConfig,
    scene: &Scene,
) -> Result<PatchSelection, PipelineError> {
    let cloud = &scene.cloud;
    let n = cloud.len();
    let n_down = config.downsample_points.min(n);
    let fps = fps_downsample(cloud, n_down, 0)?;
    let lo_cloud = cloud.subset(&fps);
    let pool: Vec<usize> = if config.use_patch_selection {
        let heatmap = match config.heatmap {
            HeatmapMode::GtScale => gt_scale_heatmap(cloud, config.eta)?.restrict(&fps),
            HeatmapMode::Curvature => {
                curvature_heatmap(&lo_cloud, config.curvature_k, config.curvature_top_fraction)?
            }
        };
        binarize_and_pool(&heatmap, config.theta)
    } else {
        // Ablation: uniform whole-object covering patches.
        (0..n_down).collect()
    };
    let patch_size = config.downsample_points.min(n);
    let sampling = sample_covering_patches(
        cloud,
        &lo_cloud.points,
        &pool,
        patch_size,
        config.max_patches,
        derive_seed(config.seed, "patches", 0),
    )?;
    Ok(PatchSelection { fps_indices: fps, pool, patch_size, sampling })
}

/// Run the full cascade on a scene. When `out_dir` is given, every stage's
/// outputs are written there with content hashes in `provenance.txt`.
pub fn run_pipeline(
    config: &PipelineConfig,
    scene: &Scene,
    out_dir: Option<&Path>,
) -> Result<PipelineOutput, PipelineError> {
    config.validate().map_err(PipelineError::BadConfig)?;
    let cloud = &scene.cloud;
    let n = cloud.len();
    if n == 0 {
        return Err(PipelineError::BadConfig("empty cloud".into()));
    }
    let mut provenance = Vec::new();
    let mut log = |line: String| provenance.push(line);

    // Stage outputs are persisted as they are produced when an output
    // directory is given.
    let segs_dir = out_dir.map(|dir| dir.join("segs"));
    if let Some(segs_dir) = &segs_dir {
        std::fs::create_dir_all(segs_dir).map_err(|e| PipelineError::Output(e.to_string()))?;
    }
    let save_seg = |seg: &SoftSegmentation, name: &str| -> Result<(), PipelineError> {
        if let Some(segs_dir) = &segs_dir {
            crate::segmenters::io::save_segmentation(seg, &segs_dir.join(name))
                .map_err(|e| PipelineError::Output(e.to_string()))?;
        }
        Ok(())
    };

    // Global pass on the full-resolution cloud.
    let global_seg = if config.use_global_in_merge {
        let seg = segment_global(config, scene)?;
        log(format!(
            "global segmenter={} k={} hash={:016x}",
            config.global_segmenter.name(),
            seg.k,
            fnv1a64(&crate::segmenters::io::segmentation_to_bytes(&seg)),
        ));
        save_seg(&seg, "global.cpfseg")?;
        Some(seg)
    } else {
        log("global pass disabled (use_global_in_merge=false)".to_string());
        None
    };

    // Downsample, heatmap, pool, covering patches.
    let selection = select_patches(config, scene)?;
    log(format!("fps n={} start=0 hash={:016x}", selection.fps_indices.len(), {
        let bytes: Vec<u8> = selection
            .fps_indices
            .iter()
            .flat_map(|&i| (i as u64).to_le_bytes())
            .collect();
        fnv1a64(&bytes)
    }));
    log(format!(
        "pool mode={} theta={} size={} of {}",
        match (config.use_patch_selection, config.heatmap) {
            (false, _) => "uniform".to_string(),
            (true, HeatmapMode::GtScale) => format!("gt_scale eta={}", config.eta),
            (true, HeatmapMode::Curvature) => format!(
                "curvature k={} top={}",
                config.curvature_k, config.curvature_top_fraction
            ),
        },
        config.theta,
        selection.pool.len(),
        selection.fps_indices.len()
    ));
    let pool = &selection.pool;
    let sampling = &selection.sampling;
    if pool.is_empty() {
        log("warning: empty pool, running global-only".to_string());
    }
    if !sampling.uncovered_pool.is_empty() {
        log(format!(
            "warning: patch cap bound with {} pool points uncovered",
            sampling.uncovered_pool.len()
        ));
    }
    let max_map = sampling.mapping_distances.iter().fold(0.0f64, |a, &b| a.max(b));
    log(format!(
        "patches count={} size={} max_pool_mapping_distance={max_map:.3e}",
        sampling.patches.len(),
        selection.patch_size
    ));
    if let Some(dir) = out_dir {
        let hash = crate::cloud::io::cloud_content_hash(cloud)
            .map_err(|e| PipelineError::Output(e.to_string()))?;
        crate::patching::save_patches(sampling, "cloud.cpfc", &hash, &dir.join("patches.cpfp"))
            .map_err(|e| PipelineError::Output(e.to_string()))?;
    }

    // Local passes, ordered by patch index regardless of worker scheduling.
    let workers = worker_count().min(sampling.patches.len().max(1));
    let mut local_results: Vec<Option<Result<SoftSegmentation, String>>> =
        Vec::with_capacity(sampling.patches.len());
    if workers <= 1 || sampling.patches.len() <= 1 {
        for (i, patch) in sampling.patches.iter().enumerate() {
            local_results.push(Some(
                segment_patch(config, scene, i, patch).map_err(|e| e.to_string()),
            ));
        }
    } else {
        local_results.resize_with(sampling.patches.len(), || None);
        let slots = std::sync::Mutex::new(&mut local_results);
        std::thread::scope(|scope| {
            for worker in 0..workers {
                let patches = &sampling.patches;
                let slots = &slots;
                scope.spawn(move || {
                    for i in (worker..patches.len()).step_by(workers) {
                        let out = segment_patch(config, scene, i, &patches[i])
                            .map_err(|e| e.to_string());
                        slots.lock().expect("worker slots")[i] = Some(out);
                    }
                });
            }
        });
    }

    let mut segs: Vec<SoftSegmentation> = Vec::new();
    let mut skipped_patches = Vec::new();
    for (i, result) in local_results.into_iter().enumerate() {
        match result.expect("every patch slot filled") {
            Ok(seg) => {
                log(format!(
                    "patch {i} segmenter={} k={} hash={:016x}",
                    config.local_segmenter.name(),
                    seg.k,
                    fnv1a64(&crate::segmenters::io::segmentation_to_bytes(&seg)),
                ));
                save_seg(&seg, &format!("patch_{i:03}.cpfseg"))?;
                segs.push(seg);
            }
            Err(reason) => {
                log(format!("warning: patch {i} skipped: {reason}"));
                skipped_patches.push((i, reason));
            }
        }
    }
    if let Some(g) = global_seg {
        segs.push(g);
    }
    if segs.is_empty() {
        return Err(PipelineError::BadConfig(
            "no segmentations produced (global disabled and every patch failed)".into(),
        ));
    }

    // Stack, merge, finalize.
    let stacked = stack(segs)?;
    log(format!(
        "stacked columns={} dropped={}",
        stacked.n_columns(),
        stacked.dropped.len()
    ));
    let inter = intersections(&stacked);
    let grouping = greedy_merge(&inter, &stacked.column_scope);
    grouping.check_constraints(&stacked.column_scope)?;
    let audit = grouping.recompute_objective(&inter);
    if (audit - grouping.objective).abs() > 1e-6 {
        return Err(PipelineError::BadConfig(format!(
            "objective audit failed: reported {} recomputed {audit}",
            grouping.objective
        )));
    }
    log(format!(
        "merge groups={} objective={:.6}",
        grouping.n_groups(),
        grouping.objective
    ));
    let labeling = finalize(&stacked, &grouping, &cloud.points)?;
    log(format!(
        "finalize fallback_points={} fitted={}",
        labeling.fallback_points.len(),
        labeling.primitives.iter().flatten().count()
    ));

    // Evaluation whenever ground truth is available.
    let (report, records) = if cloud.gt_label.is_some() {
        let (report, records) = evaluate(scene, &labeling, &config.epsilons)?;
        log(format!("evaluate seg_miou={:.3}%", report.seg_miou_pct));
        (Some(report), records)
    } else {
        (None, Vec::new())
    };

    let output = PipelineOutput {
        labeling,
        report,
        records,
        grouping,
        column_scope: stacked.column_scope.clone(),
        n_patches: sampling.patches.len(),
        pool_size: pool.len(),
        uncovered_pool: sampling.uncovered_pool.len(),
        skipped_patches,
        provenance,
    };

    if let Some(dir) = out_dir {
        write_outputs(&output, scene, config, dir)?;
    }
    Ok(output)
}

/// Labeled cloud for output: input positions, estimated normals, final
/// labels, final types.
pub fn labeled_cloud(scene: &Scene, labeling: &FinalLabeling) -> crate::cloud::PointCloud {
    crate::cloud::PointCloud {
        points: scene.cloud.points.clone(),
        normals: Some(labeling.normals.clone()),
        gt_label: Some(labeling.labels.clone()),
        gt_type: Some(labeling.types.clone()),
    }
}

fn write_outputs(
    output: &PipelineOutput,
    scene: &Scene,
    config: &PipelineConfig,
    dir: &Path,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Output(e.to_string()))?;
    let fail = |e: &dyn std::fmt::Display| PipelineError::Output(e.to_string());

    let labeled = labeled_cloud(scene, &output.labeling);
    let labeled_path = dir.join("labeled.cpfc");
    crate::cloud::io::save_cloud(&labeled, &labeled_path).map_err(|e| fail(&e))?;
    let labeled_hash = crate::cloud::io::cloud_content_hash(&labeled).map_err(|e| fail(&e))?;

    crate::merge::io::save_grouping(&output.grouping, &output.column_scope, &dir.join("grouping.cpfgroup"))
        .map_err(|e| fail(&e))?;
    crate::merge::io::save_primitive_list(&output.labeling.primitives, &dir.join("primitives.cpfprim"))
        .map_err(|e| fail(&e))?;

    let mut agg = SuiteAggregator::default();
    if let Some(report) = &output.report {
        agg.add("cloud", report.clone(), output.records.clone());
        let json = serde_json::to_string_pretty(&agg.summary())
            .map_err(|e| fail(&e))?;
        std::fs::write(dir.join("report.json"), json).map_err(|e| fail(&e))?;
        std::fs::write(dir.join("per_cloud.csv"), agg.per_cloud_csv()).map_err(|e| fail(&e))?;
        std::fs::write(dir.join("per_primitive.csv"), agg.per_primitive_csv())
            .map_err(|e| fail(&e))?;
    }

    let mut prov = String::new();
    prov.push_str(&format!("config_hash {:016x}\n", fnv1a64(config.to_text().as_bytes())));
    prov.push_str(&format!("labeled_cloud {labeled_hash}\n"));
    for line in &output.provenance {
        prov.push_str(line);
        prov.push('\n');
    }
    std::fs::write(dir.join("provenance.txt"), prov).map_err(|e| fail(&e))?;
    Ok(())
}

/// Convenience for tests and the comparison harness: run the global
/// segmenter alone on the FPS-downsampled cloud (the "trained at low
/// resolution" stand-in) and finalize it over the full cloud.
pub fn run_downsampled_global_only(
    config: &PipelineConfig,
    scene: &Scene,
) -> Result<PipelineOutput, PipelineError> {
    config.validate().map_err(PipelineError::BadConfig)?;
    let cloud = &scene.cloud;
    let n = cloud.len();
    let n_down = config.downsample_points.min(n);
    let fps = fps_downsample(cloud, n_down, 0)?;
    let seed = derive_seed(config.seed, "global-seg", 0);
    let seg = match config.global_segmenter {
        SegmenterChoice::Oracle => oracle_segment(
            Scope::Global,
            &fps,
            scene,
            &config.oracle.corruption(),
            config.k_glob,
            seed,
        )
        .map_err(PipelineError::GlobalSegmenter)?,
        SegmenterChoice::Ransac => {
            let normals = cloud
                .normals
                .as_ref()
                .ok_or_else(|| PipelineError::BadConfig("ransac needs normals".into()))?;
            let pts: Vec<crate::math::Vec3> = fps.iter().map(|&i| cloud.points[i]).collect();
            let ns: Vec<crate::math::Vec3> = fps.iter().map(|&i| normals[i]).collect();
            let params = RansacParams {
                max_dist: config.ransac.max_dist,
                min_inliers: ((config.ransac.min_inlier_frac_global * n_down as f64).round()
                    as usize)
                    .max(3),
                normal_thresh_deg: config.ransac.normal_thresh_deg,
                max_candidates: config.ransac.candidates,
                k_max: config.k_glob,
                score_subsample: config.ransac.score_subsample,
                seed,
            };
            ransac_segment(Scope::Global, &fps, &pts, &ns, n, &params)
                .map_err(PipelineError::GlobalSegmenter)?
        }
    };
    let stacked = stack(vec![seg])?;
    let inter = intersections(&stacked);
    let grouping = greedy_merge(&inter, &stacked.column_scope);
    grouping.check_constraints(&stacked.column_scope)?;
    let labeling = finalize(&stacked, &grouping, &cloud.points)?;
    let (report, records) = if cloud.gt_label.is_some() {
        let (r, rec) = evaluate(scene, &labeling, &config.epsilons)?;
        (Some(r), rec)
    } else {
        (None, Vec::new())
    };
    Ok(PipelineOutput {
        labeling,
        report,
        records,
        column_scope: stacked.column_scope.clone(),
        grouping,
        n_patches: 0,
        pool_size: 0,
        uncovered_pool: 0,
        skipped_patches: Vec::new(),
        provenance: vec!["downsampled global-only comparison run".to_string()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{synthesize_scene, RandomSceneParams, SceneSpec};

    fn quick_scene(seed: u64) -> Scene {
        let spec = SceneSpec::random(
            seed,
            &RandomSceneParams { n_primitives: 5, small_count: 2, ..Default::default() },
        );
        synthesize_scene(&spec, 4096, 0.0).unwrap()
    }

    fn quick_config() -> PipelineConfig {
        PipelineConfig {
            downsample_points: 1024,
            max_patches: 8,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn oracle_cascade_round_trips_exactly() {
        let scene = quick_scene(0);
        let config = quick_config();
        let out = run_pipeline(&config, &scene, None).unwrap();
        let report = out.report.unwrap();
        assert_eq!(report.seg_miou_pct, 100.0);
        assert_eq!(report.type_accuracy_pct, Some(100.0));
        assert_eq!(report.normal_diff_deg, Some(0.0));
    }

    #[test]
    fn pipeline_is_deterministic() {
        let scene = quick_scene(1);
        let config = quick_config();
        let a = run_pipeline(&config, &scene, None).unwrap();
        let b = run_pipeline(&config, &scene, None).unwrap();
        assert_eq!(a.labeling.labels, b.labeling.labels);
        assert_eq!(a.provenance, b.provenance);
    }

    #[test]
    fn ablations_still_satisfy_merge_constraints() {
        let scene = quick_scene(2);
        let mut config = quick_config();
        config.use_global_in_merge = false;
        config.use_patch_selection = false;
        let out = run_pipeline(&config, &scene, None).unwrap();
        out.grouping.check_constraints(&out.column_scope).unwrap();
        assert!(out.column_scope.iter().all(|s| matches!(s, Scope::Patch(_))));
    }

    #[test]
    fn empty_pool_falls_back_to_global_only() {
        let scene = quick_scene(3);
        let mut config = quick_config();
        // Every primitive is far bigger than this eta.
        config.eta = 1e-6;
        let out = run_pipeline(&config, &scene, None).unwrap();
        assert_eq!(out.n_patches, 0);
        assert!(out.provenance.iter().any(|l| l.contains("empty pool")));
        assert_eq!(out.report.unwrap().seg_miou_pct, 100.0);
    }
}
