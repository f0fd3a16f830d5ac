//! `cpf` — synthesize scenes, segment them globally or per patch, merge the
//! soft segmentations, evaluate against ground truth, run the whole cascade,
//! and benchmark the merge solvers.
//!
//! Exit codes: 0 success, 2 validation/usage error, 3 runtime failure.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use cpf_core::cloud::{io as cloud_io, RandomSceneParams, Scene, SceneSpec};
use cpf_core::math::derive_seed;
use cpf_core::merge::{
    exact_merge, finalize, greedy_merge, intersections, io as merge_io, random_instance, stack,
    ExactLimits, ExactOutcome, FinalLabeling,
};
use cpf_core::metrics::{evaluate, SuiteAggregator};
use cpf_core::patching::{load_patches, save_patches};
use cpf_core::pipeline::{
    labeled_cloud, run_pipeline, segment_global, segment_patch, select_patches, PipelineConfig,
};
use cpf_core::segmenters::io as seg_io;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "cpf", version, about = "Cascaded primitive fitting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> anyhow::Result<PipelineConfig> {
        match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                PipelineConfig::from_text(&text).map_err(|e| anyhow!("config: {e}"))
            }
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled scene into a directory (cloud.cpfc + scene.cpfs).
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 131_072)]
        points: usize,
        #[arg(long, default_value_t = 8)]
        primitives: usize,
        #[arg(long, default_value_t = 5e-3)]
        noise: f64,
        /// How many of the primitives are deliberately small.
        #[arg(long, default_value_t = 0)]
        small: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Select covering patches for a scene and write the patch-set file.
    Patches {
        /// Directory holding cloud.cpfc and scene.cpfs.
        scene_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run a segmentation backend: global pass, or one pass per patch.
    Segment {
        scene_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        /// Patch-set file; segments each patch instead of the global scope.
        #[arg(long)]
        patches: Option<PathBuf>,
        /// Output directory for .cpfseg files.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Stack segmentation files, merge greedily, and finalize labels.
    Merge {
        scene_dir: PathBuf,
        /// Directory of .cpfseg files to stack.
        #[arg(long)]
        segs: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Evaluate a predicted labeling directory against a scene's ground truth.
    Evaluate {
        scene_dir: PathBuf,
        /// Directory holding labeled.cpfc and primitives.cpfprim.
        #[arg(long)]
        pred: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the full cascade on a scene directory.
    Run {
        scene_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare the greedy and exact merge solvers on random instances.
    BenchMerge {
        #[arg(long, default_value_t = 12)]
        columns: usize,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

/// Errors that indicate misuse rather than a runtime failure.
#[derive(Debug)]
struct ValidationError(String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ValidationError {}

fn validation(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ValidationError(msg.into()))
}

fn load_scene(dir: &Path) -> anyhow::Result<Scene> {
    let cloud_path = dir.join("cloud.cpfc");
    let sidecar_path = dir.join("scene.cpfs");
    if !cloud_path.exists() {
        return Err(validation(format!("{} not found", cloud_path.display())));
    }
    let cloud = cloud_io::load_cloud(&cloud_path)
        .map_err(|e| validation(format!("loading cloud: {e}")))?;
    if !sidecar_path.exists() {
        return Err(validation(format!("{} not found", sidecar_path.display())));
    }
    let (primitives, noise) = cloud_io::load_scene_sidecar(&sidecar_path)
        .map_err(|e| validation(format!("loading sidecar: {e}")))?;
    Scene::from_parts(cloud, primitives, noise).map_err(validation)
}

fn cmd_synth(
    seed: u64,
    points: usize,
    primitives: usize,
    noise: f64,
    small: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let params = RandomSceneParams {
        n_primitives: primitives,
        small_count: small.min(primitives),
        ..Default::default()
    };
    let spec = SceneSpec::random(seed, &params);
    let scene = cpf_core::synthesize_scene(&spec, points, noise)
        .map_err(|e| validation(format!("synthesis rejected: {e}")))?;
    std::fs::create_dir_all(out)?;
    cloud_io::save_cloud(&scene.cloud, &out.join("cloud.cpfc"))?;
    cloud_io::save_scene_sidecar(&scene, &out.join("scene.cpfs"))?;
    println!(
        "synthesized {} points over {} primitives into {}",
        scene.cloud.len(),
        scene.primitives.len(),
        out.display()
    );
    Ok(())
}

fn cmd_patches(scene_dir: &Path, config: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let scene = load_scene(scene_dir)?;
    config.validate().map_err(validation)?;
    let selection = select_patches(config, &scene)
        .map_err(|e| validation(format!("patch selection: {e}")))?;
    let cloud_path = scene_dir.join("cloud.cpfc").display().to_string();
    let hash = cloud_io::cloud_content_hash(&scene.cloud)?;
    save_patches(&selection.sampling, &cloud_path, &hash, out)?;
    println!(
        "pool {} of {}, {} patches ({} pool points uncovered) -> {}",
        selection.pool.len(),
        selection.fps_indices.len(),
        selection.sampling.patches.len(),
        selection.sampling.uncovered_pool.len(),
        out.display()
    );
    Ok(())
}

fn cmd_segment(
    scene_dir: &Path,
    config: &PipelineConfig,
    patches: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let scene = load_scene(scene_dir)?;
    config.validate().map_err(validation)?;
    std::fs::create_dir_all(out)?;
    match patches {
        None => {
            let seg = segment_global(config, &scene)?;
            let path = out.join("global.cpfseg");
            seg_io::save_segmentation(&seg, &path)?;
            println!("global pass: {} segments -> {}", seg.k, path.display());
        }
        Some(patch_file) => {
            let (sampling, _, recorded_hash) = load_patches(patch_file)?;
            let hash = cloud_io::cloud_content_hash(&scene.cloud)?;
            if recorded_hash != hash {
                return Err(validation(format!(
                    "patch set was built for cloud {recorded_hash}, this cloud is {hash}"
                )));
            }
            let mut written = 0usize;
            for (i, patch) in sampling.patches.iter().enumerate() {
                match segment_patch(config, &scene, i, patch) {
                    Ok(seg) => {
                        seg_io::save_segmentation(&seg, &out.join(format!("patch_{i:03}.cpfseg")))?;
                        written += 1;
                    }
                    Err(e) => eprintln!("patch {i} skipped: {e}"),
                }
            }
            println!("{written} of {} patches segmented -> {}", sampling.patches.len(), out.display());
        }
    }
    Ok(())
}

fn cmd_merge(scene_dir: &Path, segs_dir: &Path, out: &Path) -> anyhow::Result<()> {
    let scene = load_scene(scene_dir)?;
    let mut seg_paths: Vec<PathBuf> = std::fs::read_dir(segs_dir)
        .with_context(|| format!("reading {}", segs_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "cpfseg"))
        .collect();
    seg_paths.sort();
    if seg_paths.is_empty() {
        return Err(validation(format!("no .cpfseg files in {}", segs_dir.display())));
    }
    let mut segs = Vec::with_capacity(seg_paths.len());
    for p in &seg_paths {
        segs.push(seg_io::load_segmentation(p)?);
    }
    let stacked = stack(segs)?;
    let inter = intersections(&stacked);
    let grouping = greedy_merge(&inter, &stacked.column_scope);
    grouping.check_constraints(&stacked.column_scope)?;
    let labeling = finalize(&stacked, &grouping, &scene.cloud.points)?;

    std::fs::create_dir_all(out)?;
    cloud_io::save_cloud(&labeled_cloud(&scene, &labeling), &out.join("labeled.cpfc"))?;
    merge_io::save_grouping(&grouping, &stacked.column_scope, &out.join("grouping.cpfgroup"))?;
    merge_io::save_primitive_list(&labeling.primitives, &out.join("primitives.cpfprim"))?;
    println!(
        "{} columns -> {} groups (objective {:.4}) -> {}",
        stacked.n_columns(),
        grouping.n_groups(),
        grouping.objective,
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(
    scene_dir: &Path,
    pred: &Path,
    config: &PipelineConfig,
    out: &Path,
) -> anyhow::Result<()> {
    let scene = load_scene(scene_dir)?;
    let labeled = cloud_io::load_cloud(&pred.join("labeled.cpfc"))?;
    if labeled.len() != scene.cloud.len() {
        return Err(validation(format!(
            "prediction covers {} points, scene has {}",
            labeled.len(),
            scene.cloud.len()
        )));
    }
    let labels = labeled
        .gt_label
        .clone()
        .ok_or_else(|| validation("labeled.cpfc carries no label channel"))?;
    let types = labeled
        .gt_type
        .clone()
        .ok_or_else(|| validation("labeled.cpfc carries no type channel"))?;
    let normals = labeled
        .normals
        .clone()
        .ok_or_else(|| validation("labeled.cpfc carries no normal channel"))?;
    let primitives = merge_io::load_primitive_list(&pred.join("primitives.cpfprim"))?;
    let labeling = FinalLabeling::from_channels(labels, types, normals, primitives);

    let (report, records) = evaluate(&scene, &labeling, &config.epsilons)?;
    std::fs::create_dir_all(out)?;
    let mut agg = SuiteAggregator::default();
    agg.add("cloud", report, records);
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&agg.summary())?,
    )?;
    std::fs::write(out.join("per_cloud.csv"), agg.per_cloud_csv())?;
    std::fs::write(out.join("per_primitive.csv"), agg.per_primitive_csv())?;
    println!(
        "seg mIoU {:.3}% -> {}",
        agg.summary().seg_miou_pct,
        out.display()
    );
    Ok(())
}

fn cmd_run(scene_dir: &Path, config: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let scene = load_scene(scene_dir)?;
    let output = run_pipeline(config, &scene, Some(out))?;
    match &output.report {
        Some(r) => println!(
            "{} patches, {} groups, seg mIoU {:.3}% -> {}",
            output.n_patches,
            output.grouping.n_groups(),
            r.seg_miou_pct,
            out.display()
        ),
        None => println!(
            "{} patches, {} groups -> {}",
            output.n_patches,
            output.grouping.n_groups(),
            out.display()
        ),
    }
    Ok(())
}

fn cmd_bench_merge(columns: usize, instances: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    if !(3..=16).contains(&columns) {
        return Err(validation("columns must be between 3 and 16"));
    }
    let mut csv = String::from("instance,columns,greedy_obj,exact_obj,ratio,greedy_ms,exact_ms\n");
    let mut optimal = 0usize;
    let mut ratio_sum = 0.0;
    let mut solved = 0usize;
    for i in 0..instances {
        let (matrix, scopes) = random_instance(derive_seed(seed, "bench-merge", i as u64), columns);
        let t0 = Instant::now();
        let greedy = greedy_merge(&matrix, &scopes);
        let greedy_ms = t0.elapsed().as_secs_f64() * 1e3;
        let t1 = Instant::now();
        let exact = exact_merge(&matrix, &scopes, &ExactLimits::default());
        let exact_ms = t1.elapsed().as_secs_f64() * 1e3;
        match exact {
            ExactOutcome::Solved(exact) => {
                let ratio = if exact.objective > 0.0 {
                    greedy.objective / exact.objective
                } else {
                    1.0
                };
                ratio_sum += ratio;
                solved += 1;
                if (exact.objective - greedy.objective).abs() < 1e-9 {
                    optimal += 1;
                }
                csv.push_str(&format!(
                    "{i},{},{:.6},{:.6},{ratio:.6},{greedy_ms:.3},{exact_ms:.3}\n",
                    matrix.s, greedy.objective, exact.objective
                ));
            }
            ExactOutcome::NotSolved { reason } => {
                csv.push_str(&format!(
                    "{i},{},{:.6},not_solved({reason}),,{greedy_ms:.3},{exact_ms:.3}\n",
                    matrix.s, greedy.objective
                ));
            }
        }
    }
    std::fs::write(out, csv)?;
    println!(
        "{solved}/{instances} solved exactly; greedy/exact mean ratio {:.4}; greedy optimal in {:.1}% -> {}",
        ratio_sum / solved.max(1) as f64,
        100.0 * optimal as f64 / solved.max(1) as f64,
        out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { seed, points, primitives, noise, small, out } => {
            cmd_synth(seed, points, primitives, noise, small, &out)
        }
        Command::Patches { scene_dir, config, out } => {
            cmd_patches(&scene_dir, &config.load()?, &out)
        }
        Command::Segment { scene_dir, config, patches, out } => {
            cmd_segment(&scene_dir, &config.load()?, patches.as_deref(), &out)
        }
        Command::Merge { scene_dir, segs, out } => cmd_merge(&scene_dir, &segs, &out),
        Command::Evaluate { scene_dir, pred, config, out } => {
            cmd_evaluate(&scene_dir, &pred, &config.load()?, &out)
        }
        Command::Run { scene_dir, config, out } => cmd_run(&scene_dir, &config.load()?, &out),
        Command::BenchMerge { columns, instances, seed, out } => {
            cmd_bench_merge(columns, instances, seed, &out)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.chain().any(|c| c.is::<ValidationError>()) { 2 } else { 3 };
            std::process::exit(code);
        }
    }
}
