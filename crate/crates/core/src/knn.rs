//! Uniform-grid nearest-neighbor index.
//!
//! Good for small-k queries (curvature neighborhoods, pool mapping). For the
//! very large k used by patch extraction, a brute-force select is cheaper;
//! see [`k_nearest_brute`].

use crate::math::Vec3;
use std::collections::HashMap;

pub struct SpatialGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    origin: Vec3,
    cells: HashMap<(i32, i32, i32), Vec<u32>>,
}

impl<'a> SpatialGrid<'a> {
    /// Build a grid over `points`. Cell size is derived from the bounding box
    /// so that queries over surface-like data touch a handful of cells.
    pub fn build(points: &'a [Vec3]) -> SpatialGrid<'a> {
        assert!(!points.is_empty(), "cannot index an empty point set");
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let diag = (hi - lo).norm().max(1e-9);
        // Surface data occupies ~sqrt(n) cells per side at uniform density.
        let side = (points.len() as f64).sqrt().max(1.0);
        let cell = (diag / side * 2.0).max(1e-9);
        let origin = lo;
        let mut cells: HashMap<(i32, i32, i32), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(&origin, cell, p)).or_default().push(i as u32);
        }
        SpatialGrid { points, cell, origin, cells }
    }

    fn key(origin: &Vec3, cell: f64, p: &Vec3) -> (i32, i32, i32) {
        (
            ((p.x - origin.x) / cell).floor() as i32,
            ((p.y - origin.y) / cell).floor() as i32,
            ((p.z - origin.z) / cell).floor() as i32,
        )
    }

    /// Index of the nearest point to `q` (lowest index wins ties).
    pub fn nearest(&self, q: &Vec3) -> usize {
        self.k_nearest(q, 1)[0]
    }

    /// Indices of the `k` nearest points to `q`, closest first, ties broken
    /// by index. Falls back to scanning everything when the expanding search
    /// exhausts the grid.
    pub fn k_nearest(&self, q: &Vec3, k: usize) -> Vec<usize> {
        let k = k.min(self.points.len());
        let center = Self::key(&self.origin, self.cell, q);
        let mut found: Vec<(f64, u32)> = Vec::new();
        let mut ring = 0i32;
        loop {
            // Visit the shell of cells at Chebyshev radius `ring`.
            let mut visit = |cx: i32, cy: i32, cz: i32| {
                if let Some(ids) = self.cells.get(&(cx, cy, cz)) {
                    for &i in ids {
                        let d2 = (self.points[i as usize] - q).norm_squared();
                        found.push((d2, i));
                    }
                }
            };
            if ring == 0 {
                visit(center.0, center.1, center.2);
            } else {
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        for dz in -ring..=ring {
                            if dx.abs().max(dy.abs()).max(dz.abs()) == ring {
                                visit(center.0 + dx, center.1 + dy, center.2 + dz);
                            }
                        }
                    }
                }
            }
            if found.len() >= k {
                found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                // All cells within Chebyshev radius `ring` are visited, so any
                // unvisited point is at least `ring * cell` away.
                let guaranteed = ring as f64 * self.cell;
                if found[k - 1].0.sqrt() <= guaranteed {
                    return found[..k].iter().map(|&(_, i)| i as usize).collect();
                }
            }
            ring += 1;
            let span = (ring * 2 + 1) as i64;
            if span * span * span > 8 * self.cells.len() as i64 + 27 {
                // Expanding further costs more than scanning what's left.
                let mut all: Vec<(f64, u32)> = self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ((p - q).norm_squared(), i as u32))
                    .collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                return all[..k].iter().map(|&(_, i)| i as usize).collect();
            }
        }
    }
}

/// Brute-force k-nearest: one linear pass plus a partial sort. Preferable
/// when `k` is a sizable fraction of the point count.
pub fn k_nearest_brute(points: &[Vec3], q: &Vec3, k: usize) -> Vec<usize> {
    let k = k.min(points.len());
    let mut dists: Vec<(f64, u32)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - q).norm_squared(), i as u32))
        .collect();
    let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1));
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, cmp);
        dists.truncate(k);
    }
    dists.sort_by(cmp);
    dists.into_iter().map(|(_, i)| i as usize).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_points(n: usize) -> Vec<Vec3> {
        let mut state = 0xdeadbeefu64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        (0..n).map(|_| Vec3::new(next(), next(), next())).collect()
    }

    #[test]
    fn grid_matches_brute_force() {
        let pts = sample_points(500);
        let grid = SpatialGrid::build(&pts);
        for qi in [0usize, 17, 123, 499] {
            let q = pts[qi] + Vec3::new(0.001, -0.002, 0.0005);
            for k in [1usize, 5, 30] {
                assert_eq!(grid.k_nearest(&q, k), k_nearest_brute(&pts, &q, k), "k={k} qi={qi}");
            }
        }
    }

    #[test]
    fn nearest_finds_identity_on_subset_queries() {
        let pts = sample_points(200);
        let grid = SpatialGrid::build(&pts);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(grid.nearest(p), i);
        }
    }

    #[test]
    fn brute_force_handles_k_equal_n() {
        let pts = sample_points(8);
        let got = k_nearest_brute(&pts, &Vec3::zeros(), 8);
        assert_eq!(got.len(), 8);
    }
}
