//! Sequential multi-type RANSAC backend: propose primitive candidates from
//! minimal samples, score by inlier count under a distance and a
//! normal-agreement gate, extract the best, remove its inliers, repeat.

use super::{sorted_scope, Scope, SegmenterError, SoftSegmentation};
use crate::fitprim::{fit_kind, WeightedSupport};
use crate::math::{derive_seed, Vec3};
use crate::primitive::Primitive;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RansacParams {
    /// Maximum point-to-surface distance for inliers.
    pub max_dist: f64,
    /// A segment must reach this many inliers to be extracted.
    pub min_inliers: usize,
    /// Maximum angle between the point normal and the surface normal at the
    /// point, in degrees (orientation-agnostic).
    pub normal_thresh_deg: f64,
    /// Candidates proposed per extraction round.
    pub max_candidates: usize,
    /// Cap on the number of extracted segments.
    pub k_max: usize,
    /// Candidates are ranked on a subsample of at most this many remaining
    /// points before the winner is verified on everything.
    pub score_subsample: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            max_dist: 0.01,
            min_inliers: 32,
            normal_thresh_deg: 30.0,
            max_candidates: 1024,
            k_max: crate::cloud::K_GLOB,
            score_subsample: 2048,
            seed: 0,
        }
    }
}

struct Candidate {
    primitive: Primitive,
}

fn is_inlier(prim: &Primitive, p: &Vec3, n: &Vec3, max_dist: f64, cos_thresh: f64) -> bool {
    if prim.distance_to(p) > max_dist {
        return false;
    }
    let surface_n = prim.normal_at(p);
    surface_n.dot(n).abs() >= cos_thresh
}

fn propose(
    kind_cycle: usize,
    points: &[Vec3],
    normals: &[Vec3],
    remaining: &[usize],
    rng: &mut ChaCha8Rng,
) -> Option<Candidate> {
    let draw = |rng: &mut ChaCha8Rng| remaining[rng.random_range(0..remaining.len())];
    let draw_distinct = |rng: &mut ChaCha8Rng, k: usize| -> Option<Vec<usize>> {
        if remaining.len() < k {
            return None;
        }
        let mut picks: Vec<usize> = Vec::with_capacity(k);
        for _ in 0..8 * k {
            let c = draw(rng);
            if !picks.contains(&c) {
                picks.push(c);
                if picks.len() == k {
                    return Some(picks);
                }
            }
        }
        None
    };

    let primitive = match kind_cycle % 4 {
        0 => {
            // Plane, alternating between one point + its normal and a
            // three-point construction.
            if kind_cycle.is_multiple_of(8) {
                let i = draw(rng);
                let n = normals[i];
                Primitive::Plane { normal: n, offset: n.dot(&points[i]) }
            } else {
                let picks = draw_distinct(rng, 3)?;
                let (a, b, c) = (points[picks[0]], points[picks[1]], points[picks[2]]);
                let n = (b - a).cross(&(c - a));
                let norm = n.norm();
                if norm < 1e-12 {
                    return None;
                }
                let n = n / norm;
                Primitive::Plane { normal: n, offset: n.dot(&a) }
            }
        }
        1 => {
            // Sphere, alternating between two points + normals and four points.
            if kind_cycle % 8 == 1 {
                let picks = draw_distinct(rng, 2)?;
                let (p1, n1) = (points[picks[0]], normals[picks[0]]);
                let (p2, n2) = (points[picks[1]], normals[picks[1]]);
                // Closest approach of the two inward lines p_i - t n_i.
                let d = p1 - p2;
                let a = 1.0;
                let b = n1.dot(&n2);
                let det = a * a - b * b;
                if det.abs() < 1e-9 {
                    return None;
                }
                let c1 = d.dot(&n1);
                let c2 = d.dot(&n2);
                let t1 = (b * c2 - c1) / det;
                let t2 = (c2 - b * c1) / det;
                let q1 = p1 + n1 * t1;
                let q2 = p2 + n2 * t2;
                let center = (q1 + q2) * 0.5;
                let radius = ((p1 - center).norm() + (p2 - center).norm()) * 0.5;
                if !(radius.is_finite() && radius > 1e-9) {
                    return None;
                }
                Primitive::Sphere { center, radius }
            } else {
                let picks = draw_distinct(rng, 4)?;
                let pts: Vec<Vec3> = picks.iter().map(|&i| points[i]).collect();
                let ns: Vec<Vec3> = picks.iter().map(|&i| normals[i]).collect();
                let w = [1.0; 4];
                match crate::fitprim::fit_sphere(&WeightedSupport::new(&pts, &ns, &w)) {
                    Ok(p) => p,
                    Err(_) => return None,
                }
            }
        }
        2 => {
            // Cylinder from two points + normals.
            let picks = draw_distinct(rng, 2)?;
            let (p1, n1) = (points[picks[0]], normals[picks[0]]);
            let (p2, n2) = (points[picks[1]], normals[picks[1]]);
            let axis = n1.cross(&n2);
            let axis_norm = axis.norm();
            if axis_norm < 1e-6 {
                return None;
            }
            let axis = axis / axis_norm;
            // Project onto the plane orthogonal to the axis and intersect
            // the two inward normal lines in 2D.
            let e1 = crate::math::any_orthonormal(&axis);
            let e2 = axis.cross(&e1);
            let flat = |v: &Vec3| (v.dot(&e1), v.dot(&e2));
            let (p1u, p1v) = flat(&p1);
            let (p2u, p2v) = flat(&p2);
            let (n1u, n1v) = flat(&n1);
            let (n2u, n2v) = flat(&n2);
            // Solve p1' - t1 n1' = p2' - t2 n2' for t1 by Cramer's rule.
            let det = -n1u * n2v + n1v * n2u;
            if det.abs() < 1e-9 {
                return None;
            }
            let rhs = (p2u - p1u, p2v - p1v);
            let t1 = (rhs.0 * n2v - rhs.1 * n2u) / det;
            let cu = p1u - t1 * n1u;
            let cv = p1v - t1 * n1v;
            let radius = (((p1u - cu).powi(2) + (p1v - cv).powi(2)).sqrt()
                + ((p2u - cu).powi(2) + (p2v - cv).powi(2)).sqrt())
                * 0.5;
            if !(radius.is_finite() && radius > 1e-9) {
                return None;
            }
            let axis_point = e1 * cu + e2 * cv;
            Primitive::Cylinder { axis, axis_point, radius }
        }
        _ => {
            // Cone from three points + normals, attempted only when the
            // normals are non-coplanar (degenerate proposals dominate
            // otherwise).
            let picks = draw_distinct(rng, 3)?;
            let ns: Vec<Vec3> = picks.iter().map(|&i| normals[i]).collect();
            let det = Matrix3::from_columns(&[ns[0], ns[1], ns[2]]).determinant();
            if det.abs() < 1e-6 {
                return None;
            }
            let pts: Vec<Vec3> = picks.iter().map(|&i| points[i]).collect();
            let w = [1.0; 3];
            match crate::fitprim::fit_cone(&WeightedSupport::new(&pts, &ns, &w)) {
                Ok(p) => p,
                Err(_) => return None,
            }
        }
    };
    Some(Candidate { primitive })
}

/// Run sequential RANSAC over a scope. `points` and `normals` are the scoped
/// coordinates aligned with `scope_indices` after sorting (pass data in the
/// same frame you want the reported primitives in).
pub fn ransac_segment(
    scope: Scope,
    scope_indices: &[usize],
    points: &[Vec3],
    normals: &[Vec3],
    n_full: usize,
    params: &RansacParams,
) -> Result<SoftSegmentation, SegmenterError> {
    if params.max_dist <= 0.0 {
        return Err(SegmenterError::BadParameter(format!("max_dist {}", params.max_dist)));
    }
    if params.k_max == 0 {
        return Err(SegmenterError::BadParameter("k_max must be positive".into()));
    }
    let indices = sorted_scope(scope_indices, n_full)?;
    let m = indices.len();
    if points.len() != scope_indices.len() || normals.len() != scope_indices.len() {
        return Err(SegmenterError::BadParameter(format!(
            "scope has {} indices but {} points / {} normals",
            scope_indices.len(),
            points.len(),
            normals.len()
        )));
    }
    // Re-align the coordinate arrays with the sorted index order.
    let order: Vec<usize> = {
        let mut o: Vec<usize> = (0..scope_indices.len()).collect();
        o.sort_by_key(|&i| scope_indices[i]);
        o
    };
    let points: Vec<Vec3> = order.iter().map(|&i| points[i]).collect();
    let normals: Vec<Vec3> = order.iter().map(|&i| normals[i]).collect();

    let cos_thresh = params.normal_thresh_deg.to_radians().cos();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "ransac", 0));

    let mut remaining: Vec<usize> = (0..m).collect();
    let mut segments: Vec<(Primitive, Vec<usize>)> = Vec::new();

    while remaining.len() >= params.min_inliers.max(1) && segments.len() < params.k_max {
        // Rank candidates on a subsample, verify the winner on everything.
        let subsample: Vec<usize> = if remaining.len() <= params.score_subsample {
            remaining.clone()
        } else {
            let mut pool = remaining.clone();
            for i in 0..params.score_subsample {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(params.score_subsample);
            pool
        };

        let mut best: Option<(usize, Candidate)> = None;
        for c in 0..params.max_candidates {
            let Some(candidate) = propose(c, &points, &normals, &remaining, &mut rng) else {
                continue;
            };
            if candidate.primitive.validate().is_err() {
                continue;
            }
            let score = subsample
                .iter()
                .filter(|&&i| is_inlier(&candidate.primitive, &points[i], &normals[i], params.max_dist, cos_thresh))
                .count();
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, candidate));
            }
        }

        let Some((score, winner)) = best else { break };
        if score == 0 {
            break;
        }
        let full_inliers: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| is_inlier(&winner.primitive, &points[i], &normals[i], params.max_dist, cos_thresh))
            .collect();
        if full_inliers.len() < params.min_inliers {
            break;
        }

        // Refit on the inlier set; keep the refit only if it still explains
        // at least as many points as the floor demands.
        let (primitive, inliers) = {
            let pts: Vec<Vec3> = full_inliers.iter().map(|&i| points[i]).collect();
            let ns: Vec<Vec3> = full_inliers.iter().map(|&i| normals[i]).collect();
            let w = vec![1.0; pts.len()];
            match fit_kind(winner.primitive.kind(), &WeightedSupport::new(&pts, &ns, &w)) {
                Ok(refit) => {
                    let refined: Vec<usize> = remaining
                        .iter()
                        .copied()
                        .filter(|&i| is_inlier(&refit, &points[i], &normals[i], params.max_dist, cos_thresh))
                        .collect();
                    if refined.len() >= params.min_inliers && refined.len() >= full_inliers.len() {
                        (refit, refined)
                    } else {
                        (winner.primitive, full_inliers)
                    }
                }
                Err(_) => (winner.primitive, full_inliers),
            }
        };

        let inlier_set: std::collections::HashSet<usize> = inliers.iter().copied().collect();
        remaining.retain(|i| !inlier_set.contains(i));
        segments.push((primitive, inliers));
    }

    if segments.is_empty() {
        // Nothing reached the inlier floor: single "unsegmented" column with
        // uniform type probabilities, flagged.
        let seg = SoftSegmentation {
            scope,
            n_full,
            point_indices: indices,
            k: 1,
            probs: vec![1.0; m],
            type_probs: vec![0.25; m * 4],
            est_normals: normals,
            leftover: vec![false; m],
            unsegmented: true,
            segment_primitives: None,
        };
        debug_assert!(seg.validate().is_ok());
        return Ok(seg);
    }

    // Leftover points go to their nearest detected surface, flagged.
    let k = segments.len();
    let mut assignment = vec![usize::MAX; m];
    let mut leftover = vec![false; m];
    for (s, (_, inliers)) in segments.iter().enumerate() {
        for &i in inliers {
            assignment[i] = s;
        }
    }
    for &i in &remaining {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (s, (prim, _)) in segments.iter().enumerate() {
            let d = prim.distance_to(&points[i]);
            if d < best_d {
                best_d = d;
                best = s;
            }
        }
        assignment[i] = best;
        leftover[i] = true;
    }

    let mut probs = vec![0.0; m * k];
    let mut type_probs = vec![0.0; m * 4];
    for i in 0..m {
        let s = assignment[i];
        probs[i * k + s] = 1.0;
        type_probs[i * 4 + segments[s].0.kind().tag() as usize] = 1.0;
    }

    let seg = SoftSegmentation {
        scope,
        n_full,
        point_indices: indices,
        k,
        probs,
        type_probs,
        est_normals: normals,
        leftover,
        unsegmented: false,
        segment_primitives: Some(segments.into_iter().map(|(p, _)| p).collect()),
    };
    debug_assert!(seg.validate().is_ok(), "{:?}", seg.validate());
    Ok(seg)
}
