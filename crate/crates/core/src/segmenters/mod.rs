//! Pluggable segmentation backends producing soft segmentations, per-point
//! type distributions, and per-point normal estimates for a scope (the whole
//! cloud or one patch).

mod oracle;
mod ransac;

pub mod io;

pub use oracle::{oracle_segment, OracleCorruption, SplitMerge};
pub use ransac::{ransac_segment, RansacParams};

use crate::math::Vec3;
use crate::primitive::Primitive;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegmenterError {
    #[error("scope is empty")]
    EmptyScope,
    #[error("scope needs normals for this backend")]
    MissingNormals,
    #[error("scope needs ground-truth labels for this backend")]
    MissingGroundTruth,
    #[error("scope contains {got} segments, backend cap is {cap}")]
    TooManySegments { got: usize, cap: usize },
    #[error("corruption parameter out of range: {0}")]
    BadCorruption(String),
    #[error("parameter out of range: {0}")]
    BadParameter(String),
    #[error("scope index {index} out of bounds for cloud of {len}")]
    ScopeOutOfBounds { index: usize, len: usize },
}

/// Which points a segmentation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Global,
    Patch(usize),
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Global => write!(f, "global"),
            Scope::Patch(i) => write!(f, "patch:{i}"),
        }
    }
}

/// Soft segmentation of one scope. Conceptually an `N_full x K` probability
/// matrix with zero rows for points outside the scope; stored sparsely as the
/// sorted scope indices plus a dense `|scope| x K` block.
#[derive(Debug, Clone)]
pub struct SoftSegmentation {
    pub scope: Scope,
    pub n_full: usize,
    /// Sorted full-cloud indices of the scoped points.
    pub point_indices: Vec<usize>,
    /// Number of segment columns.
    pub k: usize,
    /// Row-major `|scope| x k` membership probabilities.
    pub probs: Vec<f64>,
    /// Row-major `|scope| x 4` type distributions.
    pub type_probs: Vec<f64>,
    /// Unit normal estimate per scoped point.
    pub est_normals: Vec<Vec3>,
    /// Scoped points that were assigned by nearest-surface fallback rather
    /// than as inliers (RANSAC only).
    pub leftover: Vec<bool>,
    /// Set when no candidate reached the inlier floor on the first round.
    pub unsegmented: bool,
    /// World-frame per-segment primitives when the backend produced them.
    pub segment_primitives: Option<Vec<Primitive>>,
}

impl SoftSegmentation {
    pub fn scope_len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.probs[row * self.k..(row + 1) * self.k]
    }

    pub fn type_row(&self, row: usize) -> &[f64] {
        &self.type_probs[row * 4..(row + 1) * 4]
    }

    /// Mass of one segment column: the sum of its probabilities.
    pub fn column_mass(&self, col: usize) -> f64 {
        (0..self.scope_len()).map(|r| self.probs[r * self.k + col]).sum()
    }

    /// Hard labels: per scoped point the argmax column (ties to the lowest).
    pub fn argmax_labels(&self) -> Vec<usize> {
        (0..self.scope_len())
            .map(|r| {
                let row = self.row(r);
                let mut best = 0usize;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Structural invariants: sorted in-bounds indices, rows summing to one,
    /// unit normals.
    pub fn validate(&self) -> Result<(), String> {
        let m = self.point_indices.len();
        if self.probs.len() != m * self.k {
            return Err(format!("probs has {} entries, expected {}", self.probs.len(), m * self.k));
        }
        if self.type_probs.len() != m * 4 {
            return Err(format!("type_probs has {} entries, expected {}", self.type_probs.len(), m * 4));
        }
        if self.est_normals.len() != m || self.leftover.len() != m {
            return Err("per-point channels disagree in length".into());
        }
        for w in self.point_indices.windows(2) {
            if w[0] >= w[1] {
                return Err(format!("point indices not strictly increasing at {w:?}"));
            }
        }
        if let Some(&last) = self.point_indices.last() {
            if last >= self.n_full {
                return Err(format!("point index {last} out of bounds for n_full {}", self.n_full));
            }
        }
        for r in 0..m {
            let s: f64 = self.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(format!("probability row {r} sums to {s}"));
            }
            if self.row(r).iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
                return Err(format!("probability row {r} has out-of-range entries"));
            }
            let t: f64 = self.type_row(r).iter().sum();
            if (t - 1.0).abs() > 1e-6 {
                return Err(format!("type row {r} sums to {t}"));
            }
            let n = self.est_normals[r].norm();
            if (n - 1.0).abs() > 1e-6 {
                return Err(format!("estimated normal {r} has norm {n}"));
            }
        }
        Ok(())
    }
}

/// Shared helper: sort and bounds-check scope indices.
pub(crate) fn sorted_scope(scope_indices: &[usize], n_full: usize) -> Result<Vec<usize>, SegmenterError> {
    if scope_indices.is_empty() {
        return Err(SegmenterError::EmptyScope);
    }
    let mut sorted = scope_indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&last) = sorted.last() {
        if last >= n_full {
            return Err(SegmenterError::ScopeOutOfBounds { index: last, len: n_full });
        }
    }
    Ok(sorted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_display_tokens() {
        assert_eq!(Scope::Global.to_string(), "global");
        assert_eq!(Scope::Patch(3).to_string(), "patch:3");
    }

    #[test]
    fn sorted_scope_dedups_and_checks_bounds() {
        assert_eq!(sorted_scope(&[3, 1, 3, 2], 10).unwrap(), vec![1, 2, 3]);
        assert!(matches!(sorted_scope(&[], 10), Err(SegmenterError::EmptyScope)));
        assert!(matches!(
            sorted_scope(&[10], 10),
            Err(SegmenterError::ScopeOutOfBounds { .. })
        ));
    }
}
