//! O(n^3) Hungarian algorithm (shortest augmenting paths with potentials)
//! for rectangular assignment, plus the maximize-total-IoU wrapper used by
//! the matching stage.

/// Minimum-cost assignment on an `n x m` matrix with `n <= m`.
/// Returns, for each row, the assigned column.
fn solve_min_cost(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    assert!(n <= m, "solve_min_cost requires rows <= cols");
    const INF: f64 = f64::INFINITY;

    // 1-indexed potentials and matching state.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut assigned_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut result = vec![usize::MAX; n];
    for j in 1..=m {
        if assigned_row[j] != 0 {
            result[assigned_row[j] - 1] = j - 1;
        }
    }
    result
}

/// Maximize the total score of a one-to-one assignment on a rectangular
/// `rows x cols` score matrix (rectangularity handled by zero-score
/// dummies). Returns `(row, col)` pairs for every real row/col pairing the
/// optimum assigns, including zero-score ones.
pub fn solve_max_assignment(scores: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = scores.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = scores[0].len();
    if cols == 0 {
        return Vec::new();
    }
    let dim = rows.max(cols);
    // Pad to square and negate: max-score becomes min-cost.
    let cost: Vec<Vec<f64>> = (0..dim)
        .map(|r| {
            (0..dim)
                .map(|c| if r < rows && c < cols { -scores[r][c] } else { 0.0 })
                .collect()
        })
        .collect();
    let assignment = solve_min_cost(&cost);
    assignment
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| r < rows && c < cols)
        .collect()
}
