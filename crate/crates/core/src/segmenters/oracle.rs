//! Ground-truth oracle backend with controlled corruption, used to exercise
//! the merging stage independently of any real segmenter.

use super::{sorted_scope, Scope, SegmenterError, SoftSegmentation};
use crate::cloud::Scene;
use crate::math::{any_orthonormal, derive_seed, rotate_about, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Optional structural perturbation applied before label flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMerge {
    #[default]
    None,
    /// Split the largest segment in two by a random plane through its centroid.
    Split,
    /// Merge the two largest segments into one column.
    Merge,
}

/// Controlled corruption knobs. All-zero corruption reproduces the exact
/// one-hot ground truth restricted to the scope.
#[derive(Debug, Clone, Copy)]
pub struct OracleCorruption {
    /// Fraction of scoped points whose label flips to a neighboring segment.
    pub flip_rate: f64,
    /// Blend toward the uniform distribution: row = (1-t) onehot + t/K.
    pub temperature: f64,
    /// Maximum normal jitter angle, degrees.
    pub normal_jitter_deg: f64,
    pub split_merge: SplitMerge,
}

impl Default for OracleCorruption {
    fn default() -> Self {
        OracleCorruption {
            flip_rate: 0.0,
            temperature: 0.0,
            normal_jitter_deg: 0.0,
            split_merge: SplitMerge::None,
        }
    }
}

impl OracleCorruption {
    pub fn none() -> Self {
        Self::default()
    }

    fn validate(&self) -> Result<(), SegmenterError> {
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err(SegmenterError::BadCorruption(format!("flip_rate {}", self.flip_rate)));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(SegmenterError::BadCorruption(format!("temperature {}", self.temperature)));
        }
        if !(self.normal_jitter_deg >= 0.0 && self.normal_jitter_deg <= 180.0) {
            return Err(SegmenterError::BadCorruption(format!(
                "normal_jitter_deg {}",
                self.normal_jitter_deg
            )));
        }
        Ok(())
    }
}

/// One-hot ground-truth segmentation of the scope, renumbered to local
/// segment ids, with controlled corruption applied. Deterministic in `seed`.
pub fn oracle_segment(
    scope: Scope,
    scope_indices: &[usize],
    scene: &Scene,
    corruption: &OracleCorruption,
    k_max: usize,
    seed: u64,
) -> Result<SoftSegmentation, SegmenterError> {
    corruption.validate()?;
    let cloud = &scene.cloud;
    let gt = cloud.gt_label.as_ref().ok_or(SegmenterError::MissingGroundTruth)?;
    let gt_types = cloud.gt_type.as_ref().ok_or(SegmenterError::MissingGroundTruth)?;
    let normals = cloud.normals.as_ref().ok_or(SegmenterError::MissingNormals)?;
    let indices = sorted_scope(scope_indices, cloud.len())?;
    let m = indices.len();

    // Renumber the ground-truth labels present in the scope, ascending.
    let mut distinct: Vec<i32> = indices.iter().map(|&i| gt[i]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let mut labels: Vec<usize> = indices
        .iter()
        .map(|&i| distinct.binary_search(&gt[i]).unwrap())
        .collect();
    let mut k = distinct.len();
    if k > k_max {
        return Err(SegmenterError::TooManySegments { got: k, cap: k_max });
    }

    let centroid_of = |labels: &[usize], target: usize| -> Vec3 {
        let mut c = Vec3::zeros();
        let mut n = 0usize;
        for (row, &l) in labels.iter().enumerate() {
            if l == target {
                c += cloud.points[indices[row]];
                n += 1;
            }
        }
        c / n.max(1) as f64
    };
    let segment_sizes = |labels: &[usize], k: usize| -> Vec<usize> {
        let mut sizes = vec![0usize; k];
        for &l in labels {
            sizes[l] += 1;
        }
        sizes
    };

    // Structural perturbation first, so flips act on the perturbed layout.
    match corruption.split_merge {
        SplitMerge::None => {}
        SplitMerge::Split => {
            if k < k_max {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "oracle-split", 0));
                let sizes = segment_sizes(&labels, k);
                let target = sizes
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap();
                let centroid = centroid_of(&labels, target);
                let z = rng.random::<f64>() * 2.0 - 1.0;
                let phi = rng.random::<f64>() * std::f64::consts::TAU;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let plane_normal = Vec3::new(r * phi.cos(), r * phi.sin(), z);
                let mut moved = 0usize;
                for (row, l) in labels.iter_mut().enumerate() {
                    if *l == target && (cloud.points[indices[row]] - centroid).dot(&plane_normal) >= 0.0 {
                        *l = k;
                        moved += 1;
                    }
                }
                if moved == 0 || moved == sizes[target] {
                    // Split fell entirely on one side; undo the relabel.
                    for l in labels.iter_mut() {
                        if *l == k {
                            *l = target;
                        }
                    }
                } else {
                    k += 1;
                }
            }
        }
        SplitMerge::Merge => {
            if k >= 2 {
                let sizes = segment_sizes(&labels, k);
                let mut order: Vec<usize> = (0..k).collect();
                order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
                let (keep, drop) = (order[0].min(order[1]), order[0].max(order[1]));
                for l in labels.iter_mut() {
                    if *l == drop {
                        *l = keep;
                    } else if *l > drop {
                        *l -= 1;
                    }
                }
                k -= 1;
            }
        }
    }

    // Label flips toward the nearest other segment (by centroid distance).
    if corruption.flip_rate > 0.0 && k >= 2 {
        let centroids: Vec<Vec3> = (0..k).map(|s| centroid_of(&labels, s)).collect();
        let neighbor: Vec<usize> = (0..k)
            .map(|s| {
                (0..k)
                    .filter(|&t| t != s)
                    .min_by(|&a, &b| {
                        let da = (centroids[a] - centroids[s]).norm();
                        let db = (centroids[b] - centroids[s]).norm();
                        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                    })
                    .unwrap()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "oracle-flip", 0));
        for l in labels.iter_mut() {
            if rng.random::<f64>() < corruption.flip_rate {
                *l = neighbor[*l];
            }
        }
    }

    // Membership rows, softened toward uniform by the temperature.
    let t = corruption.temperature;
    let mut probs = vec![t / k as f64; m * k];
    for (row, &l) in labels.iter().enumerate() {
        probs[row * k + l] += 1.0 - t;
    }

    // Type rows from per-point ground truth, softened the same way.
    let mut type_probs = vec![t / 4.0; m * 4];
    for (row, &i) in indices.iter().enumerate() {
        type_probs[row * 4 + gt_types[i].tag() as usize] += 1.0 - t;
    }

    // Normals jittered by at most the requested angle.
    let est_normals: Vec<Vec3> = if corruption.normal_jitter_deg > 0.0 {
        let max_angle = corruption.normal_jitter_deg.to_radians();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "oracle-jitter", 0));
        indices
            .iter()
            .map(|&i| {
                let n = normals[i];
                let angle = rng.random::<f64>() * max_angle;
                let azimuth = rng.random::<f64>() * std::f64::consts::TAU;
                let t1 = any_orthonormal(&n);
                let t2 = n.cross(&t1);
                let axis = t1 * azimuth.cos() + t2 * azimuth.sin();
                rotate_about(&n, &axis, angle)
            })
            .collect()
    } else {
        indices.iter().map(|&i| normals[i]).collect()
    };

    let seg = SoftSegmentation {
        scope,
        n_full: cloud.len(),
        point_indices: indices,
        k,
        probs,
        type_probs,
        est_normals,
        leftover: vec![false; m],
        unsegmented: false,
        segment_primitives: None,
    };
    debug_assert!(seg.validate().is_ok(), "{:?}", seg.validate());
    Ok(seg)
}
