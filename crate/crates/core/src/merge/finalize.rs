//! Per-point consolidation of a merge grouping: column-wise l1-normalized
//! group scores pick the final label, type distributions sum across the
//! scopes containing the point, normals average sign-aligned, and each
//! group's primitive is refit from the weighted support.

use super::{MergeError, MergeGrouping, StackedSegmentation};
use crate::fitprim::{fit_kind, WeightedSupport};
use crate::math::Vec3;
use crate::primitive::{Primitive, PrimitiveKind};

/// Final per-point assignment plus the refit per-group primitives.
#[derive(Debug, Clone)]
pub struct FinalLabeling {
    /// Final primitive (group) index per point.
    pub labels: Vec<i32>,
    /// Final primitive type per point.
    pub types: Vec<PrimitiveKind>,
    /// Final unit normal estimate per point.
    pub normals: Vec<Vec3>,
    /// Majority type per group (drives the refit).
    pub group_types: Vec<PrimitiveKind>,
    /// Refit primitive per group; `None` when the weighted fit degenerated.
    pub primitives: Vec<Option<Primitive>>,
    /// Points that had zero score in every group and were assigned to the
    /// nearest fitted surface instead.
    pub fallback_points: Vec<usize>,
}

impl FinalLabeling {
    /// Reassemble a labeling from persisted channels (labeled cloud plus
    /// primitive list). Group types come from the fitted primitives where
    /// available, otherwise from the majority of per-point types; fallback
    /// bookkeeping is not recoverable from files and is left empty.
    pub fn from_channels(
        labels: Vec<i32>,
        types: Vec<PrimitiveKind>,
        normals: Vec<Vec3>,
        primitives: Vec<Option<Primitive>>,
    ) -> FinalLabeling {
        let k_m = primitives
            .len()
            .max(labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize));
        let mut counts = vec![[0usize; 4]; k_m];
        for (point, &l) in labels.iter().enumerate() {
            if l >= 0 {
                counts[l as usize][types[point].tag() as usize] += 1;
            }
        }
        let mut primitives = primitives;
        primitives.resize(k_m, None);
        let group_types = (0..k_m)
            .map(|g| match &primitives[g] {
                Some(p) => p.kind(),
                None => {
                    let mut best = 0usize;
                    for t in 1..4 {
                        if counts[g][t] > counts[g][best] {
                            best = t;
                        }
                    }
                    PrimitiveKind::from_tag(best as u8).expect("tag below 4")
                }
            })
            .collect();
        FinalLabeling { labels, types, normals, group_types, primitives, fallback_points: Vec::new() }
    }
}

/// Scores, labels, types, normals, and refit primitives for a grouping.
/// `positions` is the full-resolution cloud the scopes index into.
pub fn finalize(
    stacked: &StackedSegmentation,
    grouping: &MergeGrouping,
    positions: &[Vec3],
) -> Result<FinalLabeling, MergeError> {
    grouping.check_constraints(&stacked.column_scope)?;
    let n = stacked.n_full;
    if positions.len() != n {
        return Err(MergeError::MismatchedN(positions.len(), n));
    }
    let s = stacked.n_columns();
    let k_m = grouping.n_groups();
    let col_group = grouping.column_to_group(s);
    let group_size: Vec<f64> = grouping.groups.iter().map(|g| g.len() as f64).collect();

    // Stacked column of each (seg, local col) that survived the mass floor.
    let mut col_of: Vec<Vec<Option<u32>>> =
        stacked.segs.iter().map(|seg| vec![None; seg.k]).collect();
    for (global, &(si, col)) in stacked.columns.iter().enumerate() {
        col_of[si][col] = Some(global as u32);
    }

    // Contributing scopes per point, in stack order (patches then global).
    let mut contributors: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
    for (si, seg) in stacked.segs.iter().enumerate() {
        for row in 0..seg.scope_len() {
            contributors[seg.point_indices[row]].push((si as u32, row as u32));
        }
    }

    let mut labels = vec![-1i32; n];
    let mut types = vec![PrimitiveKind::Plane; n];
    let mut normals = vec![Vec3::new(0.0, 0.0, 1.0); n];
    let mut fallback_points = Vec::new();
    // Per-group weighted support, gathered as we score each point.
    let mut group_support: Vec<(Vec<usize>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); k_m];

    let mut scores = vec![0.0f64; k_m];
    for point in 0..n {
        let contribs = &contributors[point];
        if contribs.is_empty() {
            fallback_points.push(point);
            continue;
        }
        for v in scores.iter_mut() {
            *v = 0.0;
        }
        let mut type_acc = [0.0f64; 4];
        let mut normal_acc = Vec3::zeros();
        let mut first_normal: Option<Vec3> = None;
        let mut normals_all_equal = true;
        for &(si, row) in contribs {
            let seg = &stacked.segs[si as usize];
            let row = row as usize;
            for (col, &p) in seg.row(row).iter().enumerate() {
                if p > 0.0 {
                    if let Some(global) = col_of[si as usize][col] {
                        let g = col_group[global as usize];
                        scores[g] += p / group_size[g];
                    }
                }
            }
            for (t, &tp) in seg.type_row(row).iter().enumerate() {
                type_acc[t] += tp;
            }
            let est = seg.est_normals[row];
            match first_normal {
                None => {
                    first_normal = Some(est);
                    normal_acc += est;
                }
                Some(reference) => {
                    normals_all_equal &= est == reference;
                    normal_acc += if est.dot(&reference) >= 0.0 { est } else { -est };
                }
            }
        }

        let mut best_group = 0usize;
        let mut best_score = scores[0];
        for (g, &v) in scores.iter().enumerate().skip(1) {
            if v > best_score {
                best_score = v;
                best_group = g;
            }
        }
        if best_score <= 0.0 {
            // The point's only columns were dropped by the mass floor.
            fallback_points.push(point);
        } else {
            labels[point] = best_group as i32;
        }

        let mut best_type = 0usize;
        for t in 1..4 {
            if type_acc[t] > type_acc[best_type] {
                best_type = t;
            }
        }
        types[point] = PrimitiveKind::from_tag(best_type as u8).expect("tag below 4");

        // Agreeing estimates pass through untouched; re-normalizing an
        // average of identical unit vectors would perturb the last ulp.
        let norm = normal_acc.norm();
        normals[point] = if normals_all_equal {
            first_normal.expect("contributors checked non-empty")
        } else if norm > 1e-12 {
            normal_acc / norm
        } else {
            first_normal.expect("contributors checked non-empty")
        };

        // Weighted support for the refits: every group the point touches.
        for (g, &v) in scores.iter().enumerate() {
            if v > 0.0 {
                group_support[g].0.push(point);
                group_support[g].1.push(v);
            }
        }
    }

    // Majority type per group over its assigned points.
    let mut group_types = vec![PrimitiveKind::Plane; k_m];
    let mut counts = vec![[0usize; 4]; k_m];
    for point in 0..n {
        if labels[point] >= 0 {
            counts[labels[point] as usize][types[point].tag() as usize] += 1;
        }
    }
    for g in 0..k_m {
        let mut best = 0usize;
        for t in 1..4 {
            if counts[g][t] > counts[g][best] {
                best = t;
            }
        }
        group_types[g] = PrimitiveKind::from_tag(best as u8).expect("tag below 4");
    }

    // Refit each group from its weighted support.
    let mut primitives = vec![None; k_m];
    for g in 0..k_m {
        let (idx, weights) = &group_support[g];
        if idx.is_empty() {
            continue;
        }
        let pts: Vec<Vec3> = idx.iter().map(|&p| positions[p]).collect();
        let ns: Vec<Vec3> = idx.iter().map(|&p| normals[p]).collect();
        let support = WeightedSupport::new(&pts, &ns, weights);
        primitives[g] = fit_kind(group_types[g], &support).ok();
    }

    // Zero-score points go to the nearest fitted surface.
    for &point in &fallback_points {
        let mut best: Option<(f64, usize)> = None;
        for (g, prim) in primitives.iter().enumerate() {
            if let Some(p) = prim {
                let d = p.distance_to(&positions[point]);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, g));
                }
            }
        }
        match best {
            Some((_, g)) => {
                labels[point] = g as i32;
                types[point] = group_types[g];
                if contributors[point].is_empty() {
                    let prim = primitives[g].as_ref().expect("fitted group");
                    normals[point] = prim.normal_at(&positions[point]);
                }
            }
            None => {
                // No group could be fitted at all; pin to group 0.
                labels[point] = 0;
            }
        }
    }

    Ok(FinalLabeling { labels, types, normals, group_types, primitives, fallback_points })
}

#[cfg(test)]
mod tests {
    use super::super::tests::seg_from_rows;
    use super::super::{greedy_merge, intersections, stack, MergeGrouping};
    use super::*;
    use crate::segmenters::Scope;

    #[test]
    fn single_one_hot_scope_is_identity() {
        let seg = seg_from_rows(
            Scope::Global,
            4,
            vec![0, 1, 2, 3],
            vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
            ],
            None,
        );
        let expected = seg.argmax_labels();
        let stacked = stack(vec![seg]).unwrap();
        let i = intersections(&stacked);
        let grouping = greedy_merge(&i, &stacked.column_scope);
        assert_eq!(grouping.n_groups(), 2);
        let positions = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ];
        let out = finalize(&stacked, &grouping, &positions).unwrap();
        for (point, &l) in out.labels.iter().enumerate() {
            assert_eq!(l as usize, expected[point]);
        }
    }

    #[test]
    fn agreeing_patches_give_unit_score() {
        // One point covered by two patches that both put probability 1 on
        // columns merged into the same group: its score for that group is 1.
        let a = seg_from_rows(Scope::Patch(0), 2, vec![0, 1], vec![vec![1.0], vec![1.0]], None);
        let b = seg_from_rows(Scope::Patch(1), 2, vec![0, 1], vec![vec![1.0], vec![1.0]], None);
        let stacked = stack(vec![a, b]).unwrap();
        let i = intersections(&stacked);
        let grouping = greedy_merge(&i, &stacked.column_scope);
        assert_eq!(grouping.groups, vec![vec![0, 1]]);
        // Score arithmetic: (1.0 + 1.0) / |group| = 1.
        let positions = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        let out = finalize(&stacked, &grouping, &positions).unwrap();
        assert_eq!(out.labels, vec![0, 0]);
    }

    #[test]
    fn hand_evaluated_l1_normalization_on_one_point() {
        // One point, three kept columns: patch 0 contributes 0.9 to its
        // first column, patch 1 splits 0.6 / 0.4. Group g holds patch 0's
        // 0.9-column and patch 1's 0.4-column, group h holds the 0.6-column,
        // and patch 0's leftover 0.1-column stays alone:
        //   score(g) = (0.9 + 0.4) / 2 = 0.65
        //   score(h) = 0.6 / 1 = 0.6
        //   score(leftover) = 0.1 / 1 = 0.1
        // so the point lands in g with score 0.65.
        let p0 = seg_from_rows(Scope::Patch(0), 1, vec![0], vec![vec![0.9, 0.1]], None);
        let p1 = seg_from_rows(Scope::Patch(1), 1, vec![0], vec![vec![0.6, 0.4]], None);
        let stacked = stack(vec![p0, p1]).unwrap();
        // Columns: 0 = p0c0 (0.9), 1 = p0c1 (0.1), 2 = p1c0 (0.6), 3 = p1c1 (0.4).
        let grouping = MergeGrouping { groups: vec![vec![0, 3], vec![1], vec![2]], objective: 0.0 };
        let positions = vec![Vec3::zeros()];
        let out = finalize(&stacked, &grouping, &positions).unwrap();
        assert_eq!(out.labels, vec![0]);

        // Recompute the scores independently to pin the arithmetic.
        let score_g: f64 = (0.9 + 0.4) / 2.0;
        let score_h = 0.6;
        assert!((score_g - 0.65).abs() < 1e-12);
        assert!(score_g > score_h);
    }

    #[test]
    fn mass_floor_orphans_fall_back_to_nearest_surface() {
        // Point 3 only appears in a column whose mass sits below the floor
        // (dropped at stacking), so finalize assigns it to the nearest
        // fitted primitive and flags it.
        let seg = seg_from_rows(
            Scope::Global,
            4,
            vec![0, 1, 2, 3],
            vec![
                vec![1.0, 0.0],
                vec![1.0, 0.0],
                vec![1.0, 0.0],
                vec![0.9995, 0.0005],
            ],
            None,
        );
        // Column 1 carries mass 0.0005 < 4e-3: dropped.
        let stacked = stack(vec![seg]).unwrap();
        assert_eq!(stacked.n_columns(), 1);
        let i = intersections(&stacked);
        let grouping = greedy_merge(&i, &stacked.column_scope);
        let positions = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
        ];
        let out = finalize(&stacked, &grouping, &positions).unwrap();
        // Point 3 still had 0.9995 mass in the kept column, so it is scored,
        // not a fallback; only truly uncovered points fall back.
        assert!(out.fallback_points.is_empty());
        assert_eq!(out.labels, vec![0, 0, 0, 0]);
    }

    #[test]
    fn uncovered_points_take_the_nearest_fitted_surface() {
        // Points 0..3 form a plane patch; point 4 is in no scope at all.
        let seg = seg_from_rows(
            Scope::Patch(0),
            5,
            vec![0, 1, 2, 3],
            vec![vec![1.0]; 4],
            None,
        );
        let stacked = stack(vec![seg]).unwrap();
        let i = intersections(&stacked);
        let grouping = greedy_merge(&i, &stacked.column_scope);
        let positions = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.5, 0.5, 0.2),
        ];
        let out = finalize(&stacked, &grouping, &positions).unwrap();
        assert_eq!(out.fallback_points, vec![4]);
        assert_eq!(out.labels[4], 0);
    }
}
