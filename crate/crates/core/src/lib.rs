//! Decomposes high-resolution point clouds into geometric primitives with a
//! cascade of a global segmentation pass and local per-patch passes, merges
//! the overlapping soft segmentations by maximizing pairwise segment
//! intersections under assignment constraints, fits analytic primitive
//! parameters with weighted closed forms, and evaluates the result with
//! Hungarian-matched segmentation metrics.
//!
//! The crates are organized around the pipeline stages:
//!
//! - [`cloud`]: point-cloud model, synthetic scenes with ground truth, file
//!   I/O, and furthest-point sampling.
//! - [`patching`]: small-primitive heatmaps, binarization, covering patch
//!   extraction, and patch normalization.
//! - [`segmenters`]: pluggable backends (ground-truth oracle with controlled
//!   corruption, sequential multi-type RANSAC) producing soft segmentations.
//! - [`fitprim`]: weighted closed-form primitive fits.
//! - [`merge`]: stacking, segment intersections, the constrained merge
//!   solvers (greedy and exact), and per-point finalization.
//! - [`metrics`]: Hungarian-matched evaluation metrics with per-scale
//!   breakdowns.
//! - [`pipeline`]: configuration and end-to-end orchestration.

pub mod cloud;
pub mod fitprim;
pub mod knn;
pub mod math;
pub mod merge;
pub mod metrics;
pub mod patching;
pub mod pipeline;
pub mod primitive;
pub mod segmenters;

pub use cloud::{fps_downsample, synthesize_scene, PointCloud, Scene, SceneSpec};
pub use math::Vec3;
pub use primitive::{Primitive, PrimitiveKind};
