//! Constrained merge solvers: the greedy largest-intersection heuristic and
//! an exhaustive branch-and-bound for small instances.

use super::{IntersectionMatrix, MergeGrouping};
use crate::segmenters::Scope;
use std::time::{Duration, Instant};

fn scope_bits(column_scope: &[Scope]) -> Vec<u128> {
    let mut scopes: Vec<Scope> = column_scope.to_vec();
    scopes.sort();
    scopes.dedup();
    assert!(scopes.len() <= 128, "more than 128 scopes in one merge instance");
    column_scope
        .iter()
        .map(|s| 1u128 << scopes.binary_search(s).unwrap())
        .collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn groups_from_parents(parent: &mut [usize]) -> Vec<Vec<usize>> {
    let n = parent.len();
    let mut buckets: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for c in 0..n {
        let r = find(parent, c);
        buckets.entry(r).or_default().push(c);
    }
    let mut groups: Vec<Vec<usize>> = buckets.into_values().collect();
    for g in groups.iter_mut() {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Greedy merging: repeatedly take the largest remaining cross-scope
/// intersection whose two groups are still compatible, merge them, and
/// discard every pair the merge invalidated. Values never change, so a
/// single pass over the sorted positive pairs realizes the iteration.
/// Ties break toward the larger value, then the lower column pair.
pub fn greedy_merge(i: &IntersectionMatrix, column_scope: &[Scope]) -> MergeGrouping {
    greedy_merge_detailed(i, column_scope).0
}

/// Like [`greedy_merge`], additionally returning the sequence of merged
/// entry values (non-increasing by construction).
pub fn greedy_merge_detailed(
    i: &IntersectionMatrix,
    column_scope: &[Scope],
) -> (MergeGrouping, Vec<f64>) {
    let s = i.s;
    assert_eq!(column_scope.len(), s);
    let bits = scope_bits(column_scope);

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..s {
        for b in a + 1..s {
            let v = i.value(a, b);
            if v > 0.0 && bits[a] & bits[b] == 0 {
                pairs.push((v, a, b));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap()
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });

    let mut parent: Vec<usize> = (0..s).collect();
    let mut mask = bits;
    let mut trace = Vec::new();
    for &(v, a, b) in &pairs {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra == rb || mask[ra] & mask[rb] != 0 {
            continue;
        }
        parent[rb] = ra;
        mask[ra] |= mask[rb];
        trace.push(v);
    }

    let groups = groups_from_parents(&mut parent);
    let mut grouping = MergeGrouping { groups, objective: 0.0 };
    grouping.objective = grouping.recompute_objective(i);
    debug_assert!(grouping.check_constraints(column_scope).is_ok());
    (grouping, trace)
}

/// Limits for the exact solver.
#[derive(Debug, Clone)]
pub struct ExactLimits {
    pub max_columns: usize,
    pub time_budget: Duration,
}

impl Default for ExactLimits {
    fn default() -> Self {
        ExactLimits { max_columns: 16, time_budget: Duration::from_secs(60) }
    }
}

/// Result of the exact solver: either a provably optimal grouping or an
/// explicit refusal (never a silent fallback).
#[derive(Debug, Clone)]
pub enum ExactOutcome {
    Solved(MergeGrouping),
    NotSolved { reason: String },
}

impl ExactOutcome {
    pub fn solved(self) -> Option<MergeGrouping> {
        match self {
            ExactOutcome::Solved(g) => Some(g),
            ExactOutcome::NotSolved { .. } => None,
        }
    }
}

/// State of one branch-and-bound node; small enough to clone per branch.
#[derive(Clone)]
struct BbState {
    parent: Vec<usize>,
    mask: Vec<u128>,
    /// Cross-intersection mass between current roots (sum of I over the
    /// members, one direction).
    mass: Vec<f64>,
    forbidden: Vec<bool>,
    alive: Vec<bool>,
    objective: f64,
}

struct BbContext {
    s: usize,
    deadline: Instant,
    aborted: bool,
    best: MergeGrouping,
    nodes: u64,
}

impl BbState {
    fn valid_pairs(&self, s: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..s {
            if !self.alive[r] {
                continue;
            }
            for t in r + 1..s {
                if !self.alive[t] || self.forbidden[r * s + t] {
                    continue;
                }
                if self.mask[r] & self.mask[t] != 0 {
                    continue;
                }
                if self.mass[r * s + t] > 0.0 {
                    out.push((r, t));
                }
            }
        }
        out
    }
}

fn bb_recurse(state: &BbState, ctx: &mut BbContext) {
    if ctx.aborted {
        return;
    }
    ctx.nodes += 1;
    if Instant::now() > ctx.deadline {
        ctx.aborted = true;
        return;
    }
    let s = ctx.s;
    let pairs = state.valid_pairs(s);
    if pairs.is_empty() {
        if state.objective > ctx.best.objective + 1e-12 {
            let mut parent = state.parent.clone();
            let groups = groups_from_parents(&mut parent);
            ctx.best = MergeGrouping { groups, objective: state.objective };
        }
        return;
    }
    // Admissible bound: every further gain comes from pairs valid right now.
    let bound: f64 = state.objective
        + pairs.iter().map(|&(r, t)| 2.0 * state.mass[r * s + t]).sum::<f64>();
    if bound <= ctx.best.objective + 1e-12 {
        return;
    }
    // Branch on the heaviest valid pair (ties to the lowest indices).
    let &(r, t) = pairs
        .iter()
        .max_by(|&&(a, b), &&(c, d)| {
            state.mass[a * s + b]
                .partial_cmp(&state.mass[c * s + d])
                .unwrap()
                .then(c.cmp(&a))
                .then(d.cmp(&b))
        })
        .expect("pairs checked non-empty");

    // Branch 1: merge t into r.
    {
        let mut merged = state.clone();
        merged.objective += 2.0 * merged.mass[r * s + t];
        merged.parent[t] = r;
        merged.alive[t] = false;
        merged.mask[r] |= merged.mask[t];
        for x in 0..s {
            if x == r || x == t || !merged.alive[x] {
                continue;
            }
            let add = merged.mass[t * s + x];
            merged.mass[r * s + x] += add;
            merged.mass[x * s + r] = merged.mass[r * s + x];
            // A pair forbidden against either part is forbidden against the
            // union.
            if merged.forbidden[t * s + x] {
                merged.forbidden[r * s + x] = true;
                merged.forbidden[x * s + r] = true;
            }
        }
        bb_recurse(&merged, ctx);
    }

    // Branch 2: r and t never share a group.
    {
        let mut split = state.clone();
        split.forbidden[r * s + t] = true;
        split.forbidden[t * s + r] = true;
        bb_recurse(&split, ctx);
    }
}

/// Exhaustive branch-and-bound over constrained groupings. Warm-started from
/// the greedy solution, so the result never falls below it. Instances above
/// `max_columns` or past the time budget return [`ExactOutcome::NotSolved`].
pub fn exact_merge(
    i: &IntersectionMatrix,
    column_scope: &[Scope],
    limits: &ExactLimits,
) -> ExactOutcome {
    let s = i.s;
    if s > limits.max_columns {
        return ExactOutcome::NotSolved {
            reason: format!("{s} columns exceed the exact-solver limit of {}", limits.max_columns),
        };
    }
    let bits = scope_bits(column_scope);
    let (greedy, _) = greedy_merge_detailed(i, column_scope);

    let mut mass = vec![0.0f64; s * s];
    for a in 0..s {
        for b in 0..s {
            if a != b {
                mass[a * s + b] = i.value(a, b);
            }
        }
    }
    let base_objective: f64 = (0..s).map(|c| i.value(c, c)).sum();
    let state = BbState {
        parent: (0..s).collect(),
        mask: bits,
        mass,
        forbidden: vec![false; s * s],
        alive: vec![true; s],
        objective: base_objective,
    };
    let mut ctx = BbContext {
        s,
        deadline: Instant::now() + limits.time_budget,
        aborted: false,
        best: greedy,
        nodes: 0,
    };
    bb_recurse(&state, &mut ctx);
    if ctx.aborted {
        return ExactOutcome::NotSolved {
            reason: format!("time budget {:?} exhausted after {} nodes", limits.time_budget, ctx.nodes),
        };
    }
    let mut best = ctx.best;
    best.objective = best.recompute_objective(i);
    debug_assert!(best.check_constraints(column_scope).is_ok());
    ExactOutcome::Solved(best)
}

/// Deterministic random constrained instance with the structure stacked
/// one-hot segmentations produce: each column belongs to a latent primitive
/// seen from one scope, same-primitive columns share strong overlap mass,
/// and a sprinkle of weak spurious mass links unrelated columns. Used by the
/// solver comparison benchmark and the solver quality tests.
pub fn random_instance(seed: u64, max_columns: usize) -> (IntersectionMatrix, Vec<Scope>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let s = rng.random_range(3..=max_columns.max(3));
    let n_scopes = rng.random_range(2..=s.min(5));
    let n_primitives = rng.random_range(2..=6usize);
    let column_scope: Vec<Scope> = (0..s)
        .map(|c| {
            let which = if c < n_scopes { c } else { rng.random_range(0..n_scopes) };
            if which == n_scopes - 1 {
                Scope::Global
            } else {
                Scope::Patch(which)
            }
        })
        .collect();
    // Latent primitive per column and the column's point mass.
    let primitive: Vec<usize> = (0..s).map(|_| rng.random_range(0..n_primitives)).collect();
    let mass: Vec<f64> = (0..s).map(|_| 5.0 + rng.random::<f64>() * 95.0).collect();
    let mut values = vec![0.0; s * s];
    for a in 0..s {
        values[a * s + a] = mass[a];
        for b in a + 1..s {
            let shared = mass[a].min(mass[b]);
            let v = if primitive[a] == primitive[b] {
                // Two views of the same primitive overlap substantially.
                shared * (0.2 + 0.7 * rng.random::<f64>())
            } else if rng.random::<f64>() < 0.25 {
                // Spurious overlap from corrupted boundaries.
                shared * 0.1 * rng.random::<f64>()
            } else {
                0.0
            };
            values[a * s + b] = v;
            values[b * s + a] = v;
        }
    }
    (IntersectionMatrix::from_rows(s, values), column_scope)
}
