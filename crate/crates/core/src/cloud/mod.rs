//! Point-cloud data model, deterministic synthetic scene generation with
//! ground truth, and furthest-point-sampling downsampling.

mod synth;

pub mod io;

pub use synth::{RandomSceneParams, SceneSpec, TrimmedSurface};

use crate::math::Vec3;
use crate::primitive::{Primitive, PrimitiveKind};
use thiserror::Error;

/// Maximum number of primitives a scene (and the global segmentation pass)
/// may carry.
pub const K_GLOB: usize = 28;

/// Maximum number of segments a single patch pass may carry.
pub const K_LOC: usize = 21;

/// Number of noise-free surface samples stored per ground-truth primitive.
pub const SURFACE_SAMPLES_PER_PRIMITIVE: usize = 512;

/// Fraction of the total surface area below which a primitive is culled
/// during synthesis.
pub const CULL_AREA_FRACTION: f64 = 0.005;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("scene requests {got} primitives, limit is {limit}")]
    TooManyPrimitives { got: usize, limit: usize },
    #[error("scene must contain at least one primitive")]
    EmptyScene,
    #[error("surface {index} is degenerate: {reason}")]
    DegenerateSurface { index: usize, reason: String },
    #[error("total_points {got} is below the minimum of {min}")]
    TooFewPoints { got: usize, min: usize },
    #[error("noise amplitude {0} must be non-negative")]
    NegativeNoise(f64),
    #[error("cannot sample {requested} points from a cloud of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("start index {start} out of bounds for cloud of {len}")]
    StartOutOfBounds { start: usize, len: usize },
    #[error("operation requires a non-empty cloud")]
    EmptyCloud,
    #[error("operation requires ground-truth labels")]
    MissingLabels,
}

/// A point cloud in normalized coordinates with optional per-point channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Unit normals, same length as `points` when present.
    pub normals: Option<Vec<Vec3>>,
    /// Ground-truth primitive index per point; -1 means unassigned.
    pub gt_label: Option<Vec<i32>>,
    /// Ground-truth primitive kind per point (meaningful where the label is >= 0).
    pub gt_type: Option<Vec<PrimitiveKind>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        PointCloud { points, normals: None, gt_label: None, gt_type: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Structural checks: channel lengths, unit normals, and containment in
    /// the closed unit ball. `ball_slack` widens the ball bound; synthesized
    /// clouds pass their noise amplitude so displaced points remain valid.
    pub fn validate(&self, ball_slack: f64) -> Result<(), String> {
        if let Some(n) = &self.normals {
            if n.len() != self.points.len() {
                return Err(format!("normals length {} != points length {}", n.len(), self.points.len()));
            }
            for (i, v) in n.iter().enumerate() {
                if (v.norm() - 1.0).abs() > 1e-9 {
                    return Err(format!("normal {i} has norm {}", v.norm()));
                }
            }
        }
        if let Some(l) = &self.gt_label {
            if l.len() != self.points.len() {
                return Err(format!("labels length {} != points length {}", l.len(), self.points.len()));
            }
            if let Some(&bad) = l.iter().find(|&&x| x < -1) {
                return Err(format!("label {bad} below -1"));
            }
        }
        if let Some(t) = &self.gt_type {
            if t.len() != self.points.len() {
                return Err(format!("types length {} != points length {}", t.len(), self.points.len()));
            }
        }
        let bound = 1.0 + ball_slack + 1e-9;
        for (i, p) in self.points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(format!("point {i} has a non-finite coordinate"));
            }
            if p.norm() > bound {
                return Err(format!("point {i} at norm {} escapes the unit ball", p.norm()));
            }
        }
        Ok(())
    }

    /// Extract the sub-cloud at `indices`, carrying all channels along.
    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
            gt_label: self.gt_label.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            gt_type: self.gt_type.as_ref().map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }
}

/// One ground-truth primitive of a scene: the trimmed region that was
/// sampled, its analytic (untrimmed) surface, and 512 noise-free samples.
#[derive(Debug, Clone)]
pub struct ScenePrimitive {
    pub surface: TrimmedSurface,
    pub analytic: Primitive,
    pub samples: Vec<Vec3>,
}

/// A synthesized scene: primitives with ground truth plus the noisy cloud.
#[derive(Debug, Clone)]
pub struct Scene {
    pub primitives: Vec<ScenePrimitive>,
    pub cloud: PointCloud,
    pub noise_amplitude: f64,
}

impl Scene {
    /// Re-assemble a scene from a loaded cloud and sidecar content.
    pub fn from_parts(
        cloud: PointCloud,
        primitives: Vec<ScenePrimitive>,
        noise_amplitude: f64,
    ) -> Result<Scene, String> {
        let k = primitives.len() as i32;
        if let Some(labels) = &cloud.gt_label {
            if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                return Err(format!("label {bad} exceeds primitive count {k}"));
            }
        }
        Ok(Scene { primitives, cloud, noise_amplitude })
    }

    pub fn gt_primitives(&self) -> Vec<Primitive> {
        self.primitives.iter().map(|p| p.analytic).collect()
    }
}

/// Deterministic synthetic scene generation. Points are sampled on the
/// trimmed surfaces proportionally to their analytic area, the union is
/// normalized to the unit sphere, tiny primitives are culled with their
/// budget resampled onto the survivors, and every point is displaced along
/// its true normal by a uniform draw in [-noise, +noise].
pub fn synthesize_scene(
    spec: &SceneSpec,
    total_points: usize,
    noise_amplitude: f64,
) -> Result<Scene, CloudError> {
    synth::synthesize(spec, total_points, noise_amplitude)
}

/// Greedy furthest-point sampling: starting from `start_index`, each
/// successive pick maximizes the minimum distance to everything already
/// selected. Ties go to the lowest index, so the result is deterministic and
/// any prefix of the output is itself the FPS selection of that size.
pub fn fps_downsample(cloud: &PointCloud, n: usize, start_index: usize) -> Result<Vec<usize>, CloudError> {
    let len = cloud.len();
    if len == 0 {
        return Err(CloudError::EmptyCloud);
    }
    if n == 0 || n > len {
        return Err(CloudError::SampleTooLarge { requested: n, available: len });
    }
    if start_index >= len {
        return Err(CloudError::StartOutOfBounds { start: start_index, len });
    }

    let pts = &cloud.points;
    let mut selected = Vec::with_capacity(n);
    // Squared distance to the nearest selected point; -1 marks selected
    // entries so they can never win the argmax again.
    let mut min_d2 = vec![f64::INFINITY; len];
    let mut current = start_index;
    selected.push(current);
    min_d2[current] = -1.0;

    for _ in 1..n {
        let c = pts[current];
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = usize::MAX;
        for (i, p) in pts.iter().enumerate() {
            let stored = min_d2[i];
            if stored < 0.0 {
                continue;
            }
            let d2 = (p - c).norm_squared();
            let d2 = if d2 < stored { min_d2[i] = d2; d2 } else { stored };
            if d2 > best {
                best = d2;
                best_idx = i;
            }
        }
        current = best_idx;
        selected.push(current);
        min_d2[current] = -1.0;
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn cloud_of(points: Vec<Vec3>) -> PointCloud {
        PointCloud::from_points(points)
    }

    #[test]
    fn fps_two_points_is_forced() {
        let c = cloud_of(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)]);
        assert_eq!(fps_downsample(&c, 2, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn fps_square_corners_from_center() {
        // Unit-square corners plus the center; the max-min order from the
        // center is enumerable by hand: every corner sits at the same
        // distance from the center, and after picking corner 0 the remaining
        // ties keep resolving to the lowest index.
        let c = cloud_of(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.5, 0.5, 0.0),
        ]);
        assert_eq!(fps_downsample(&c, 5, 4).unwrap(), vec![4, 0, 1, 2, 3]);
        assert_eq!(fps_downsample(&c, 4, 4).unwrap(), vec![4, 0, 1, 2]);
    }

    #[test]
    fn fps_prefix_property() {
        let mut rng_state = 0x12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let pts: Vec<Vec3> = (0..200).map(|_| Vec3::new(next(), next(), next())).collect();
        let c = cloud_of(pts);
        let full = fps_downsample(&c, 60, 3).unwrap();
        for k in [1usize, 2, 17, 59] {
            assert_eq!(fps_downsample(&c, k, 3).unwrap(), full[..k]);
        }
    }

    #[test]
    fn fps_errors() {
        let c = cloud_of(vec![Vec3::zeros()]);
        assert!(matches!(fps_downsample(&c, 2, 0), Err(CloudError::SampleTooLarge { .. })));
        let empty = cloud_of(vec![]);
        assert!(matches!(fps_downsample(&empty, 1, 0), Err(CloudError::EmptyCloud)));
        assert!(matches!(fps_downsample(&c, 1, 5), Err(CloudError::StartOutOfBounds { .. })));
    }

    #[test]
    fn fps_result_is_duplicate_free() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| if i % 2 == 0 { Vec3::zeros() } else { Vec3::new(1.0, 0.0, 0.0) })
            .collect();
        let c = cloud_of(pts);
        let sel = fps_downsample(&c, 50, 0).unwrap();
        let mut sorted = sel.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
    }

    #[test]
    fn subset_carries_channels() {
        let c = PointCloud {
            points: vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)],
            normals: Some(vec![Vec3::new(0.0, 0.0, 1.0); 2]),
            gt_label: Some(vec![0, 1]),
            gt_type: Some(vec![PrimitiveKind::Plane, PrimitiveKind::Sphere]),
        };
        let s = c.subset(&[1]);
        assert_eq!(s.len(), 1);
        assert_eq!(s.gt_label.as_ref().unwrap()[0], 1);
        assert_eq!(s.gt_type.as_ref().unwrap()[0], PrimitiveKind::Sphere);
    }
}
