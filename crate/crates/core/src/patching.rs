//! Small-primitive heatmaps, heatmap binarization, covering patch
//! extraction, and patch normalization.

use crate::cloud::PointCloud;
use crate::knn::{k_nearest_brute, SpatialGrid};
use crate::math::{derive_seed, solve_dense, sym_eigen_3x3, Vec3};
use crate::primitive::Primitive;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("heatmap requires ground-truth labels")]
    MissingLabels,
    #[error("eta {0} must lie strictly between 0 and 1")]
    BadEta(f64),
    #[error("top fraction {0} must lie in (0, 1]")]
    BadTopFraction(f64),
    #[error("cloud of {cloud} points is smaller than k_neighbors {k}")]
    CloudSmallerThanK { cloud: usize, k: usize },
    #[error("k_neighbors {0} must be at least 6")]
    KTooSmall(usize),
    #[error("patch size {n} exceeds cloud size {cloud}")]
    PatchTooLarge { n: usize, cloud: usize },
    #[error("patch is degenerate: all member points coincide")]
    DegeneratePatch,
    #[error("patch member index {index} out of bounds for cloud of {len}")]
    MemberOutOfBounds { index: usize, len: usize },
    #[error("patch file is malformed at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Where a heatmap's scores came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapSource {
    GroundTruthScale,
    Curvature,
}

/// Per-point scalar in [0, 1] over some cloud.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub scores: Vec<f64>,
    pub source: HeatmapSource,
}

impl Heatmap {
    /// View of the heatmap on a sub-cloud given by `indices`.
    pub fn restrict(&self, indices: &[usize]) -> Heatmap {
        Heatmap {
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            source: self.source,
        }
    }
}

/// Score 1.0 for points whose ground-truth primitive owns fewer than
/// `eta * N` points of the cloud, 0.0 otherwise. Unassigned points score 0.
pub fn gt_scale_heatmap(cloud: &PointCloud, eta: f64) -> Result<Heatmap, PatchError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(PatchError::BadEta(eta));
    }
    let labels = cloud.gt_label.as_ref().ok_or(PatchError::MissingLabels)?;
    let n = cloud.len();
    let max_label = labels.iter().copied().max().unwrap_or(-1);
    let mut counts = vec![0usize; (max_label + 1).max(0) as usize];
    for &l in labels {
        if l >= 0 {
            counts[l as usize] += 1;
        }
    }
    let threshold = eta * n as f64;
    let scores = labels
        .iter()
        .map(|&l| {
            if l >= 0 && (counts[l as usize] as f64) < threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(Heatmap { scores, source: HeatmapSource::GroundTruthScale })
}

/// Per-point mean curvature from a weighted quadric height-field fit over the
/// k nearest neighbors, expressed in the PCA tangent frame of the
/// neighborhood. Signed; callers rank by magnitude.
pub fn mean_curvature(cloud: &PointCloud, k_neighbors: usize) -> Result<Vec<f64>, PatchError> {
    if k_neighbors < 6 {
        return Err(PatchError::KTooSmall(k_neighbors));
    }
    if cloud.len() < k_neighbors {
        return Err(PatchError::CloudSmallerThanK { cloud: cloud.len(), k: k_neighbors });
    }
    let grid = SpatialGrid::build(&cloud.points);
    let mut out = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let neighbors = grid.k_nearest(p, k_neighbors);
        debug_assert_eq!(neighbors[0], i);

        // PCA frame of the neighborhood.
        let mut centroid = Vec3::zeros();
        for &j in &neighbors {
            centroid += cloud.points[j];
        }
        centroid /= neighbors.len() as f64;
        let mut cov = Matrix3::<f64>::zeros();
        for &j in &neighbors {
            let d = cloud.points[j] - centroid;
            cov += d * d.transpose();
        }
        let eig = sym_eigen_3x3(&cov);
        let normal = eig.vectors[0];
        let e1 = eig.vectors[2];
        let e2 = normal.cross(&e1);

        let d_max = neighbors
            .iter()
            .map(|&j| (cloud.points[j] - p).norm())
            .fold(0.0f64, f64::max)
            .max(1e-12);

        // Weighted quadric h(u, v) = a u^2 + b uv + c v^2 + d u + e v + f,
        // heights measured along the PCA normal, centered at the query point.
        let mut a = [0.0f64; 36];
        let mut b = [0.0f64; 6];
        for &j in &neighbors {
            let d = cloud.points[j] - p;
            let u = d.dot(&e1);
            let v = d.dot(&e2);
            let h = d.dot(&normal);
            let w = {
                let t = (d.norm() / (d_max * 1.000001)).min(1.0);
                (1.0 - t * t).powi(2)
            };
            let row = [u * u, u * v, v * v, u, v, 1.0];
            for r in 0..6 {
                for c in 0..6 {
                    a[r * 6 + c] += w * row[r] * row[c];
                }
                b[r] += w * row[r] * h;
            }
        }
        let h = match solve_dense(6, &mut a, &mut b) {
            Ok(()) => {
                let (qa, qb, qc, qd, qe) = (b[0], b[1], b[2], b[3], b[4]);
                let denom = 2.0 * (1.0 + qd * qd + qe * qe).powf(1.5);
                ((1.0 + qe * qe) * 2.0 * qa - 2.0 * qd * qe * qb + (1.0 + qd * qd) * 2.0 * qc) / denom
            }
            // Degenerate neighborhood: treat as flat.
            Err(_) => 0.0,
        };
        out.push(h);
    }
    Ok(out)
}

/// Binary heatmap marking the `top_fraction` of points by absolute mean
/// curvature, with magnitudes clipped at the 99th percentile before ranking.
pub fn curvature_heatmap(
    cloud: &PointCloud,
    k_neighbors: usize,
    top_fraction: f64,
) -> Result<Heatmap, PatchError> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(PatchError::BadTopFraction(top_fraction));
    }
    let curvatures = mean_curvature(cloud, k_neighbors)?;
    let mut magnitudes: Vec<f64> = curvatures.iter().map(|c| c.abs()).collect();

    // Nearest-rank 99th percentile clip.
    let mut sorted = magnitudes.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let rank = ((0.99 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    let clip = sorted[rank];
    for m in magnitudes.iter_mut() {
        *m = m.min(clip);
    }

    let take = ((top_fraction * magnitudes.len() as f64).round() as usize).clamp(1, magnitudes.len());
    let mut order: Vec<usize> = (0..magnitudes.len()).collect();
    order.sort_by(|&i, &j| magnitudes[j].partial_cmp(&magnitudes[i]).unwrap().then(i.cmp(&j)));
    let mut scores = vec![0.0; magnitudes.len()];
    for &i in order.iter().take(take) {
        scores[i] = 1.0;
    }
    Ok(Heatmap { scores, source: HeatmapSource::Curvature })
}

/// Indices with score strictly above `theta`.
pub fn binarize_and_pool(heatmap: &Heatmap, theta: f64) -> Vec<usize> {
    heatmap
        .scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > theta)
        .map(|(i, _)| i)
        .collect()
}

/// A covering patch: n-nearest-neighborhood of a seed point in the
/// high-resolution cloud, with the normalization transform applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Seed index into the high-resolution cloud.
    pub seed_index: usize,
    /// Exactly n member indices into the high-resolution cloud.
    pub member_indices: Vec<usize>,
    /// Translation applied by normalization (bounding-sphere center).
    pub center: Vec3,
    /// Uniform scale applied by normalization (max radius about the center).
    pub scale: f64,
}

/// Record of the similarity `q = (p - center) / scale` applied to a patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchTransform {
    pub center: Vec3,
    pub scale: f64,
}

impl PatchTransform {
    pub fn to_patch(&self, p: &Vec3) -> Vec3 {
        (p - self.center) / self.scale
    }

    pub fn to_world(&self, q: &Vec3) -> Vec3 {
        q * self.scale + self.center
    }

    /// Map a primitive fitted in the patch frame back to world coordinates.
    pub fn primitive_to_world(&self, prim: &Primitive) -> Primitive {
        prim.from_frame(&self.center, self.scale)
    }

    /// Map a world-frame primitive into the patch frame.
    pub fn primitive_to_patch(&self, prim: &Primitive) -> Primitive {
        prim.to_frame(&self.center, self.scale)
    }
}

/// Result of covering-patch extraction. `uncovered_pool` is non-empty only
/// when the patch cap binds before the pool is covered.
#[derive(Debug, Clone)]
pub struct PatchSampling {
    pub patches: Vec<Patch>,
    /// Pool indices (into the low-resolution cloud) left uncovered.
    pub uncovered_pool: Vec<usize>,
    /// Distance from each pool point to its high-resolution counterpart, in
    /// pool order.
    pub mapping_distances: Vec<f64>,
}

fn bounding_transform(points: &[Vec3]) -> Result<PatchTransform, PatchError> {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let center = (lo + hi) * 0.5;
    let scale = points.iter().map(|p| (p - center).norm()).fold(0.0f64, f64::max);
    if scale <= 0.0 {
        return Err(PatchError::DegeneratePatch);
    }
    Ok(PatchTransform { center, scale })
}

/// Iteratively pick a uniformly random uncovered pool point, map it to its
/// nearest high-resolution counterpart, extract the n-nearest-neighbor patch
/// around it, and mark every pool point whose counterpart landed in the patch
/// as covered. Stops when the pool is covered or `max_patches` is reached.
pub fn sample_covering_patches(
    hi_cloud: &PointCloud,
    lo_points: &[Vec3],
    pool: &[usize],
    n: usize,
    max_patches: usize,
    seed: u64,
) -> Result<PatchSampling, PatchError> {
    if n > hi_cloud.len() {
        return Err(PatchError::PatchTooLarge { n, cloud: hi_cloud.len() });
    }
    if pool.is_empty() {
        return Ok(PatchSampling { patches: Vec::new(), uncovered_pool: Vec::new(), mapping_distances: Vec::new() });
    }

    // Map pool points onto the high-resolution cloud by nearest neighbor.
    let grid = SpatialGrid::build(&hi_cloud.points);
    let mut mapped = Vec::with_capacity(pool.len());
    let mut mapping_distances = Vec::with_capacity(pool.len());
    for &pi in pool {
        let q = &lo_points[pi];
        let hi = grid.nearest(q);
        mapping_distances.push((hi_cloud.points[hi] - q).norm());
        mapped.push(hi);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "covering", 0));
    let mut uncovered: Vec<usize> = (0..pool.len()).collect();
    let mut patches = Vec::new();
    let mut member_mask = vec![false; hi_cloud.len()];

    while !uncovered.is_empty() && patches.len() < max_patches {
        let pick = uncovered[rng.random_range(0..uncovered.len())];
        let seed_index = mapped[pick];
        let member_indices = k_nearest_brute(&hi_cloud.points, &hi_cloud.points[seed_index], n);
        debug_assert!(member_indices.contains(&seed_index));

        for &m in &member_indices {
            member_mask[m] = true;
        }
        uncovered.retain(|&u| !member_mask[mapped[u]]);
        for &m in &member_indices {
            member_mask[m] = false;
        }

        let member_points: Vec<Vec3> = member_indices.iter().map(|&i| hi_cloud.points[i]).collect();
        let transform = bounding_transform(&member_points)?;
        patches.push(Patch {
            seed_index,
            member_indices,
            center: transform.center,
            scale: transform.scale,
        });
    }

    let uncovered_pool = uncovered.into_iter().map(|u| pool[u]).collect();
    Ok(PatchSampling { patches, uncovered_pool, mapping_distances })
}

/// Normalized member positions, their (unchanged) normals, and the applied
/// transform.
pub type NormalizedPatch = (Vec<Vec3>, Option<Vec<Vec3>>, PatchTransform);

/// Apply the patch's normalization: translate by the bounding-sphere center
/// and scale so the farthest member sits at radius 1. Normals pass through
/// unchanged (the transform is rotation-free).
pub fn normalize_patch(patch: &Patch, cloud: &PointCloud) -> Result<NormalizedPatch, PatchError> {
    for &i in &patch.member_indices {
        if i >= cloud.len() {
            return Err(PatchError::MemberOutOfBounds { index: i, len: cloud.len() });
        }
    }
    let transform = PatchTransform { center: patch.center, scale: patch.scale };
    if transform.scale <= 0.0 {
        return Err(PatchError::DegeneratePatch);
    }
    let points: Vec<Vec3> = patch
        .member_indices
        .iter()
        .map(|&i| transform.to_patch(&cloud.points[i]))
        .collect();
    let normals = cloud
        .normals
        .as_ref()
        .map(|ns| patch.member_indices.iter().map(|&i| ns[i]).collect());
    Ok((points, normals, transform))
}

/// Patch-set file: structured text referencing a cloud file by path and
/// content hash, then per patch the seed, transform, and member indices.
pub fn save_patches(
    sampling: &PatchSampling,
    cloud_path: &str,
    cloud_hash: &str,
    path: &Path,
) -> Result<(), PatchError> {
    let mut out = String::new();
    out.push_str("CPFPATCH 1\n");
    out.push_str(&format!("cloud {cloud_path}\n"));
    out.push_str(&format!("cloud_hash {cloud_hash}\n"));
    out.push_str(&format!("uncovered {}\n", sampling.uncovered_pool.len()));
    if !sampling.uncovered_pool.is_empty() {
        let ids: Vec<String> = sampling.uncovered_pool.iter().map(|i| i.to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    out.push_str(&format!("patches {}\n", sampling.patches.len()));
    for (i, p) in sampling.patches.iter().enumerate() {
        out.push_str(&format!(
            "patch {i} seed {} center {} {} {} scale {}\n",
            p.seed_index, p.center.x, p.center.y, p.center.z, p.scale
        ));
        out.push_str(&format!("members {}\n", p.member_indices.len()));
        let ids: Vec<String> = p.member_indices.iter().map(|i| i.to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| PatchError::Io { path: path.display().to_string(), source: e })
}

/// Load a patch-set file; returns the sampling plus the recorded cloud path
/// and content hash so callers can check consistency.
pub fn load_patches(path: &Path) -> Result<(PatchSampling, String, String), PatchError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PatchError::Io { path: path.display().to_string(), source: e })?;
    let mut lines = text.lines().enumerate();
    let mut next = || {
        lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or(PatchError::MalformedFile { line: 0, reason: "unexpected end of file".into() })
    };
    let bad = |line: usize, reason: &str| PatchError::MalformedFile { line, reason: reason.into() };

    let (line, header) = next()?;
    if header.trim() != "CPFPATCH 1" {
        return Err(bad(line, "bad header"));
    }
    let (line, cloud_line) = next()?;
    let cloud_path = cloud_line
        .strip_prefix("cloud ")
        .ok_or_else(|| bad(line, "expected `cloud <path>`"))?
        .to_string();
    let (line, hash_line) = next()?;
    let cloud_hash = hash_line
        .strip_prefix("cloud_hash ")
        .ok_or_else(|| bad(line, "expected `cloud_hash <hex>`"))?
        .to_string();
    let (line, unc_line) = next()?;
    let n_uncovered: usize = unc_line
        .strip_prefix("uncovered ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(line, "expected `uncovered <count>`"))?;
    let uncovered_pool = if n_uncovered > 0 {
        let (line, ids) = next()?;
        let parsed: Result<Vec<usize>, _> = ids.split_whitespace().map(|t| t.parse()).collect();
        let parsed = parsed.map_err(|_| bad(line, "bad uncovered index"))?;
        if parsed.len() != n_uncovered {
            return Err(bad(line, "uncovered count mismatch"));
        }
        parsed
    } else {
        Vec::new()
    };
    let (line, count_line) = next()?;
    let count: usize = count_line
        .strip_prefix("patches ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(line, "expected `patches <count>`"))?;

    let mut patches = Vec::with_capacity(count);
    for expect in 0..count {
        let (line, head) = next()?;
        let tokens: Vec<&str> = head.split_whitespace().collect();
        if tokens.len() != 10
            || tokens[0] != "patch"
            || tokens[1] != expect.to_string()
            || tokens[2] != "seed"
            || tokens[4] != "center"
            || tokens[8] != "scale"
        {
            return Err(bad(line, "expected `patch <i> seed <s> center <x> <y> <z> scale <k>`"));
        }
        let seed_index: usize = tokens[3].parse().map_err(|_| bad(line, "bad seed index"))?;
        let cx: f64 = tokens[5].parse().map_err(|_| bad(line, "bad center"))?;
        let cy: f64 = tokens[6].parse().map_err(|_| bad(line, "bad center"))?;
        let cz: f64 = tokens[7].parse().map_err(|_| bad(line, "bad center"))?;
        let scale: f64 = tokens[9].parse().map_err(|_| bad(line, "bad scale"))?;
        let (line, mcount_line) = next()?;
        let m: usize = mcount_line
            .strip_prefix("members ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(line, "expected `members <count>`"))?;
        let (line, ids) = next()?;
        let member_indices: Result<Vec<usize>, _> = ids.split_whitespace().map(|t| t.parse()).collect();
        let member_indices = member_indices.map_err(|_| bad(line, "bad member index"))?;
        if member_indices.len() != m {
            return Err(bad(line, "member count mismatch"));
        }
        patches.push(Patch {
            seed_index,
            member_indices,
            center: Vec3::new(cx, cy, cz),
            scale,
        });
    }
    Ok((
        PatchSampling { patches, uncovered_pool, mapping_distances: Vec::new() },
        cloud_path,
        cloud_hash,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{synthesize_scene, SceneSpec, TrimmedSurface};
    use approx::assert_relative_eq;

    fn labeled_cloud(counts: &[usize]) -> PointCloud {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (label, &c) in counts.iter().enumerate() {
            for i in 0..c {
                points.push(Vec3::new(label as f64, i as f64 * 1e-4, 0.0));
                labels.push(label as i32);
            }
        }
        PointCloud { points, normals: None, gt_label: Some(labels), gt_type: None }
    }

    #[test]
    fn gt_scale_marks_small_primitives_exactly() {
        // One primitive owns 0.8% of the points; eta = 1% marks exactly those.
        let cloud = labeled_cloud(&[992, 8]);
        let h = gt_scale_heatmap(&cloud, 0.01).unwrap();
        for (i, &s) in h.scores.iter().enumerate() {
            let expected = if cloud.gt_label.as_ref().unwrap()[i] == 1 { 1.0 } else { 0.0 };
            assert_eq!(s, expected, "point {i}");
        }
    }

    #[test]
    fn gt_scale_saturates_when_eta_exceeds_every_primitive() {
        let cloud = labeled_cloud(&[600, 400]);
        let h = gt_scale_heatmap(&cloud, 0.99).unwrap();
        assert!(h.scores.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn gt_scale_splits_three_and_ten_percent() {
        let cloud = labeled_cloud(&[870, 30, 100]);
        let h = gt_scale_heatmap(&cloud, 0.05).unwrap();
        let labels = cloud.gt_label.as_ref().unwrap();
        for (i, &s) in h.scores.iter().enumerate() {
            let expected = if labels[i] == 1 { 1.0 } else { 0.0 };
            assert_eq!(s, expected);
        }
    }

    #[test]
    fn eta_pools_are_monotone() {
        let cloud = labeled_cloud(&[500, 300, 150, 50]);
        let h1 = gt_scale_heatmap(&cloud, 0.08).unwrap();
        let h2 = gt_scale_heatmap(&cloud, 0.2).unwrap();
        let p1 = binarize_and_pool(&h1, 0.5);
        let p2 = binarize_and_pool(&h2, 0.5);
        let set2: std::collections::HashSet<usize> = p2.iter().copied().collect();
        assert!(p1.iter().all(|i| set2.contains(i)));
        assert!(p1.len() < p2.len());
    }

    #[test]
    fn binarize_uses_strict_inequality() {
        let h = Heatmap { scores: vec![0.4, 0.6, 0.5], source: HeatmapSource::GroundTruthScale };
        assert_eq!(binarize_and_pool(&h, 0.5), vec![1]);
        let zeros = Heatmap { scores: vec![0.0; 5], source: HeatmapSource::GroundTruthScale };
        assert!(binarize_and_pool(&zeros, 0.5).is_empty());
        let ones = Heatmap { scores: vec![1.0; 5], source: HeatmapSource::GroundTruthScale };
        assert_eq!(binarize_and_pool(&ones, 0.5), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn curvature_rejects_undersized_clouds_and_k() {
        let cloud = PointCloud::from_points(vec![Vec3::zeros(); 10]);
        assert!(matches!(
            mean_curvature(&cloud, 30),
            Err(PatchError::CloudSmallerThanK { cloud: 10, k: 30 })
        ));
        assert!(matches!(mean_curvature(&cloud, 5), Err(PatchError::KTooSmall(5))));
    }

    #[test]
    fn flat_surface_has_vanishing_curvature() {
        let spec = SceneSpec {
            seed: 9,
            surfaces: vec![TrimmedSurface::Rect {
                center: Vec3::zeros(),
                u: Vec3::new(1.0, 0.0, 0.0),
                v: Vec3::new(0.0, 1.0, 0.0),
                half_u: 1.0,
                half_v: 1.0,
            }],
        };
        let scene = synthesize_scene(&spec, 4096, 0.0).unwrap();
        let curv = mean_curvature(&scene.cloud, 30).unwrap();
        assert!(curv.iter().all(|c| c.abs() <= 1e-6), "max {:?}", curv.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs())));
    }

    #[test]
    fn sphere_curvature_matches_inverse_radius() {
        let radius = 0.3;
        let spec = SceneSpec {
            seed: 10,
            surfaces: vec![TrimmedSurface::Sphere { center: Vec3::zeros(), radius }],
        };
        let scene = synthesize_scene(&spec, 4096, 0.0).unwrap();
        // Normalization rescales the sphere to the unit ball; the expected
        // curvature is 1/r with the post-normalization radius.
        let r_norm = match scene.primitives[0].analytic {
            Primitive::Sphere { radius, .. } => radius,
            _ => unreachable!(),
        };
        let curv = mean_curvature(&scene.cloud, 30).unwrap();
        let expected = 1.0 / r_norm;
        let mut within = 0usize;
        for c in &curv {
            if (c.abs() - expected).abs() <= 0.1 * expected {
                within += 1;
            }
        }
        // All points of a full sphere are interior.
        assert!(within as f64 >= 0.99 * curv.len() as f64, "{within}/{}", curv.len());
    }

    #[test]
    fn curvature_pool_concentrates_on_the_small_sphere() {
        // A big plane plus one sphere owning just under 20% of the points:
        // at least 80% of the top-20% curvature pool must land on the sphere.
        let radius = (4.0 * 0.18 / 0.82 / (4.0 * std::f64::consts::PI)).sqrt();
        let spec = SceneSpec {
            seed: 12,
            surfaces: vec![
                TrimmedSurface::Rect {
                    center: Vec3::zeros(),
                    u: Vec3::new(1.0, 0.0, 0.0),
                    v: Vec3::new(0.0, 1.0, 0.0),
                    half_u: 1.0,
                    half_v: 1.0,
                },
                TrimmedSurface::Sphere { center: Vec3::new(0.0, 0.0, 0.6), radius },
            ],
        };
        let scene = synthesize_scene(&spec, 8192, 0.0).unwrap();
        let labels = scene.cloud.gt_label.as_ref().unwrap();
        let sphere_fraction =
            labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
        assert!(sphere_fraction < 0.2, "sphere owns {sphere_fraction}");
        let h = curvature_heatmap(&scene.cloud, 30, 0.2).unwrap();
        let pool = binarize_and_pool(&h, 0.5);
        let on_sphere = pool.iter().filter(|&&i| labels[i] == 1).count();
        assert!(
            on_sphere as f64 >= 0.8 * pool.len() as f64,
            "{on_sphere} of {} pool points on the sphere",
            pool.len()
        );
    }

    #[test]
    fn pool_of_one_point_yields_one_patch() {
        let spec = SceneSpec {
            seed: 2,
            surfaces: vec![TrimmedSurface::Sphere { center: Vec3::zeros(), radius: 0.5 }],
        };
        let scene = synthesize_scene(&spec, 1024, 0.0).unwrap();
        let lo = scene.cloud.points.clone();
        let sampling =
            sample_covering_patches(&scene.cloud, &lo, &[17], 64, 32, 0).unwrap();
        assert_eq!(sampling.patches.len(), 1);
        assert!(sampling.uncovered_pool.is_empty());
        assert!(sampling.patches[0].member_indices.contains(&17));
        assert_eq!(sampling.patches[0].member_indices.len(), 64);
    }

    #[test]
    fn whole_cloud_pool_is_fully_covered() {
        let spec = SceneSpec {
            seed: 4,
            surfaces: vec![
                TrimmedSurface::Sphere { center: Vec3::new(-0.6, 0.0, 0.0), radius: 0.4 },
                TrimmedSurface::Sphere { center: Vec3::new(0.6, 0.0, 0.0), radius: 0.4 },
            ],
        };
        let scene = synthesize_scene(&spec, 8192, 0.0).unwrap();
        let pool: Vec<usize> = (0..scene.cloud.len()).collect();
        let lo = scene.cloud.points.clone();
        let sampling = sample_covering_patches(&scene.cloud, &lo, &pool, 4096, 32, 7).unwrap();
        assert!(sampling.patches.len() >= 2);
        assert!(sampling.patches.len() <= 32);
        assert!(sampling.uncovered_pool.is_empty());
        for p in &sampling.patches {
            assert_eq!(p.member_indices.len(), 4096);
        }
        // Every pool point is inside at least one patch.
        let mut covered = vec![false; scene.cloud.len()];
        for p in &sampling.patches {
            for &m in &p.member_indices {
                covered[m] = true;
            }
        }
        assert!(pool.iter().all(|&i| covered[i]));
    }

    #[test]
    fn patch_cap_binds_on_scattered_clusters() {
        // 33 clusters farther apart than any patch radius: the 32-patch cap
        // binds and the leftover coverage is reported.
        let mut points = Vec::new();
        for c in 0..33 {
            let base = Vec3::new((c % 6) as f64 * 10.0, (c / 6) as f64 * 10.0, 0.0);
            for i in 0..8 {
                points.push(base + Vec3::new(0.0, 0.0, i as f64 * 0.01));
            }
        }
        let cloud = PointCloud::from_points(points.clone());
        let pool: Vec<usize> = (0..points.len()).collect();
        let sampling = sample_covering_patches(&cloud, &points, &pool, 8, 32, 3).unwrap();
        assert_eq!(sampling.patches.len(), 32);
        assert!(!sampling.uncovered_pool.is_empty());
    }

    #[test]
    fn empty_pool_is_not_an_error() {
        let cloud = PointCloud::from_points(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]);
        let lo = cloud.points.clone();
        let sampling = sample_covering_patches(&cloud, &lo, &[], 1, 32, 0).unwrap();
        assert!(sampling.patches.is_empty());
    }

    #[test]
    fn covering_is_deterministic_in_the_seed() {
        let spec = SceneSpec {
            seed: 6,
            surfaces: vec![TrimmedSurface::Sphere { center: Vec3::zeros(), radius: 0.5 }],
        };
        let scene = synthesize_scene(&spec, 2048, 0.0).unwrap();
        let pool: Vec<usize> = (0..200).collect();
        let lo = scene.cloud.points.clone();
        let a = sample_covering_patches(&scene.cloud, &lo, &pool, 256, 32, 5).unwrap();
        let b = sample_covering_patches(&scene.cloud, &lo, &pool, 256, 32, 5).unwrap();
        assert_eq!(a.patches, b.patches);
    }

    #[test]
    fn normalize_identity_for_unit_patch() {
        // A patch already centered at the origin with max radius 1 gets the
        // identity transform.
        let points = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.5, 0.0),
            Vec3::new(0.0, -0.5, 0.0),
        ];
        let cloud = PointCloud::from_points(points.clone());
        let transform = bounding_transform(&points).unwrap();
        let patch = Patch {
            seed_index: 0,
            member_indices: vec![0, 1, 2, 3],
            center: transform.center,
            scale: transform.scale,
        };
        let (normalized, _, t) = normalize_patch(&patch, &cloud).unwrap();
        assert_relative_eq!(t.center.norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.scale, 1.0, epsilon = 1e-12);
        for (a, b) in normalized.iter().zip(&points) {
            assert_relative_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_pure_translation() {
        let base = [Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0)];
        let shifted: Vec<Vec3> = base.iter().map(|p| p + Vec3::new(5.0, 0.0, 0.0)).collect();
        let cloud = PointCloud::from_points(shifted.clone());
        let transform = bounding_transform(&shifted).unwrap();
        let patch = Patch {
            seed_index: 0,
            member_indices: vec![0, 1, 2, 3],
            center: transform.center,
            scale: transform.scale,
        };
        let (_, _, t) = normalize_patch(&patch, &cloud).unwrap();
        assert_relative_eq!((t.center - Vec3::new(5.0, 0.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.scale, 1.0, epsilon = 1e-12);
        // Round trip: a primitive mapped patch -> world -> patch is unchanged.
        let prim = Primitive::Sphere { center: Vec3::new(0.2, 0.0, 0.0), radius: 0.5 };
        let world = t.primitive_to_world(&prim);
        let back = t.primitive_to_patch(&world);
        match (prim, back) {
            (Primitive::Sphere { center: c1, radius: r1 }, Primitive::Sphere { center: c2, radius: r2 }) => {
                assert_relative_eq!((c1 - c2).norm(), 0.0, epsilon = 1e-12);
                assert_relative_eq!(r1, r2, epsilon = 1e-12);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn plane_fit_in_patch_frame_maps_back() {
        // Fit a plane on normalized patch coordinates and check the mapped
        // world plane explains the original points.
        let spec = SceneSpec {
            seed: 21,
            surfaces: vec![TrimmedSurface::Rect {
                center: Vec3::new(0.4, 0.4, 0.0),
                u: Vec3::new(1.0, 0.0, 0.0),
                v: Vec3::new(0.0, 0.0, 1.0),
                half_u: 0.3,
                half_v: 0.3,
            }],
        };
        let scene = synthesize_scene(&spec, 1024, 0.0).unwrap();
        let member_indices: Vec<usize> = (0..256).collect();
        let member_points: Vec<Vec3> = member_indices.iter().map(|&i| scene.cloud.points[i]).collect();
        let tr = bounding_transform(&member_points).unwrap();
        let patch = Patch { seed_index: 0, member_indices, center: tr.center, scale: tr.scale };
        let (pts, normals, t) = normalize_patch(&patch, &scene.cloud).unwrap();
        let normals = normals.unwrap();
        let w = vec![1.0; pts.len()];
        let fitted =
            crate::fitprim::fit_plane(&crate::fitprim::WeightedSupport::new(&pts, &normals, &w)).unwrap();
        let world = t.primitive_to_world(&fitted);
        for &i in &patch.member_indices {
            assert!(world.distance_to(&scene.cloud.points[i]) <= 1e-9);
        }
    }

    #[test]
    fn degenerate_patch_is_rejected() {
        let cloud = PointCloud::from_points(vec![Vec3::new(1.0, 1.0, 1.0); 4]);
        assert!(matches!(bounding_transform(&cloud.points), Err(PatchError::DegeneratePatch)));
    }

    #[test]
    fn patch_file_round_trip() {
        let spec = SceneSpec {
            seed: 2,
            surfaces: vec![TrimmedSurface::Sphere { center: Vec3::zeros(), radius: 0.5 }],
        };
        let scene = synthesize_scene(&spec, 1024, 0.0).unwrap();
        let lo = scene.cloud.points.clone();
        let sampling = sample_covering_patches(&scene.cloud, &lo, &[3, 99, 500], 128, 32, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patches.cpfp");
        save_patches(&sampling, "cloud.cpfc", "deadbeefdeadbeef", &path).unwrap();
        let (back, cloud_path, hash) = load_patches(&path).unwrap();
        assert_eq!(cloud_path, "cloud.cpfc");
        assert_eq!(hash, "deadbeefdeadbeef");
        assert_eq!(back.patches, sampling.patches);
        assert_eq!(back.uncovered_pool, sampling.uncovered_pool);
    }
}
