//! Segment merging: stack scoped soft segmentations, measure pairwise
//! segment intersections, group columns under the assignment constraints
//! (every column in exactly one group, never two columns from the same
//! scope together), and finalize per-point labels, types, and normals.

mod finalize;
mod solve;

pub mod io;

pub use finalize::{finalize, FinalLabeling};
pub use solve::{exact_merge, greedy_merge, greedy_merge_detailed, random_instance, ExactLimits, ExactOutcome};

use crate::cloud::{K_GLOB, K_LOC};
use crate::segmenters::{Scope, SoftSegmentation};
use thiserror::Error;

/// Columns whose total probability mass falls below this fraction of their
/// scope's point count are dropped during stacking; unused segment slots
/// carry only numerical noise.
pub const MASS_FLOOR_PER_POINT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("segmentations disagree on cloud size: {0} vs {1}")]
    MismatchedN(usize, usize),
    #[error("duplicate scope {0} in stacking input")]
    DuplicateScope(Scope),
    #[error("scope {scope} carries {got} segments, cap is {cap}")]
    ScopeOverCap { scope: Scope, got: usize, cap: usize },
    #[error("nothing to stack")]
    Empty,
    #[error("grouping violates constraints: {0}")]
    BadGrouping(String),
}

/// A column dropped by the mass floor, recorded for provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedColumn {
    pub scope: Scope,
    pub local_col: usize,
    pub mass: f64,
}

/// Column-stacked soft segmentations: patch scopes in ascending patch order,
/// then the global scope last.
#[derive(Debug)]
pub struct StackedSegmentation {
    pub n_full: usize,
    pub segs: Vec<SoftSegmentation>,
    /// Per stacked column: (index into `segs`, local column id).
    pub columns: Vec<(usize, usize)>,
    pub column_scope: Vec<Scope>,
    pub column_mass: Vec<f64>,
    pub dropped: Vec<DroppedColumn>,
}

impl StackedSegmentation {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }
}

/// Stack segmentations into one column space, dropping near-empty columns.
/// At most one global scope may be present (none is allowed for the
/// local-only ablation).
pub fn stack(segmentations: Vec<SoftSegmentation>) -> Result<StackedSegmentation, MergeError> {
    if segmentations.is_empty() {
        return Err(MergeError::Empty);
    }
    let n_full = segmentations[0].n_full;
    for seg in &segmentations {
        if seg.n_full != n_full {
            return Err(MergeError::MismatchedN(n_full, seg.n_full));
        }
        let cap = match seg.scope {
            Scope::Global => K_GLOB,
            Scope::Patch(_) => K_LOC,
        };
        if seg.k > cap {
            return Err(MergeError::ScopeOverCap { scope: seg.scope, got: seg.k, cap });
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for seg in &segmentations {
        if !seen.insert(seg.scope) {
            return Err(MergeError::DuplicateScope(seg.scope));
        }
    }

    // Canonical stack order: patches ascending, global last.
    let mut segs = segmentations;
    segs.sort_by_key(|s| match s.scope {
        Scope::Patch(i) => (0, i),
        Scope::Global => (1, 0),
    });

    let mut columns = Vec::new();
    let mut column_scope = Vec::new();
    let mut column_mass = Vec::new();
    let mut dropped = Vec::new();
    for (si, seg) in segs.iter().enumerate() {
        let floor = MASS_FLOOR_PER_POINT * seg.scope_len() as f64;
        for col in 0..seg.k {
            let mass = seg.column_mass(col);
            if mass < floor {
                dropped.push(DroppedColumn { scope: seg.scope, local_col: col, mass });
            } else {
                columns.push((si, col));
                column_scope.push(seg.scope);
                column_mass.push(mass);
            }
        }
    }
    Ok(StackedSegmentation { n_full, segs, columns, column_scope, column_mass, dropped })
}

/// Symmetric matrix of pairwise segment intersections, measured as summed
/// joint probabilities over the points. The diagonal holds each column's
/// squared-probability mass. Entries between same-scope columns are present
/// but unmergeable (the solvers skip them).
#[derive(Debug, Clone)]
pub struct IntersectionMatrix {
    pub s: usize,
    /// Row-major `s x s`.
    pub values: Vec<f64>,
}

impl IntersectionMatrix {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.s + j]
    }

    pub fn from_rows(s: usize, values: Vec<f64>) -> IntersectionMatrix {
        assert_eq!(values.len(), s * s);
        IntersectionMatrix { s, values }
    }
}

/// Compute the intersection matrix with sparse row iteration: only nonzero
/// probabilities contribute, so one-hot scopes cost one entry per point.
pub fn intersections(stacked: &StackedSegmentation) -> IntersectionMatrix {
    let s = stacked.n_columns();
    // Map (seg, local col) -> stacked column, for kept columns.
    let mut col_of: Vec<Vec<Option<u32>>> = stacked
        .segs
        .iter()
        .map(|seg| vec![None; seg.k])
        .collect();
    for (global, &(si, col)) in stacked.columns.iter().enumerate() {
        col_of[si][col] = Some(global as u32);
    }

    // Per-point nonzero entries across all scopes.
    let mut per_point: Vec<Vec<(u32, f64)>> = vec![Vec::new(); stacked.n_full];
    for (si, seg) in stacked.segs.iter().enumerate() {
        for row in 0..seg.scope_len() {
            let point = seg.point_indices[row];
            for (col, &p) in seg.row(row).iter().enumerate() {
                if p > 0.0 {
                    if let Some(global) = col_of[si][col] {
                        per_point[point].push((global, p));
                    }
                }
            }
        }
    }

    let mut values = vec![0.0f64; s * s];
    for entries in &per_point {
        for (a, &(ca, pa)) in entries.iter().enumerate() {
            let ca = ca as usize;
            values[ca * s + ca] += pa * pa;
            for &(cb, pb) in entries.iter().skip(a + 1) {
                let cb = cb as usize;
                values[ca * s + cb] += pa * pb;
                values[cb * s + ca] += pa * pb;
            }
        }
    }
    IntersectionMatrix { s, values }
}

/// A partition of the stacked columns into final primitive groups, plus the
/// achieved objective `tr(I C^T C)` (which counts the diagonal and both
/// symmetric cross terms of every within-group pair).
#[derive(Debug, Clone, PartialEq)]
pub struct MergeGrouping {
    /// Non-empty groups of column indices; each group sorted, groups ordered
    /// by their smallest column.
    pub groups: Vec<Vec<usize>>,
    pub objective: f64,
}

impl MergeGrouping {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Group id of every column.
    pub fn column_to_group(&self, n_columns: usize) -> Vec<usize> {
        let mut map = vec![usize::MAX; n_columns];
        for (g, group) in self.groups.iter().enumerate() {
            for &c in group {
                map[c] = g;
            }
        }
        map
    }

    /// Structural audit of both assignment constraints: every column in
    /// exactly one group, and no group containing two columns of one scope.
    pub fn check_constraints(&self, column_scope: &[Scope]) -> Result<(), MergeError> {
        let mut seen = vec![false; column_scope.len()];
        for group in &self.groups {
            if group.is_empty() {
                return Err(MergeError::BadGrouping("empty group".into()));
            }
            let mut scopes = std::collections::BTreeSet::new();
            for &c in group {
                if c >= column_scope.len() {
                    return Err(MergeError::BadGrouping(format!("column {c} out of range")));
                }
                if seen[c] {
                    return Err(MergeError::BadGrouping(format!("column {c} appears twice")));
                }
                seen[c] = true;
                if !scopes.insert(column_scope[c]) {
                    return Err(MergeError::BadGrouping(format!(
                        "group {group:?} holds two columns from scope {}",
                        column_scope[c]
                    )));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(MergeError::BadGrouping(format!("column {missing} unassigned")));
        }
        Ok(())
    }

    /// Recompute the objective directly from the intersection matrix.
    pub fn recompute_objective(&self, i: &IntersectionMatrix) -> f64 {
        let mut total = 0.0;
        for group in &self.groups {
            for &a in group {
                for &b in group {
                    total += i.value(a, b);
                }
            }
        }
        total
    }
}
