//! Minimum-cost rectangular assignment (Hungarian method with potentials).

/// Cost used for the dummy rows that square up a rectangular matrix.
const PAD_COST: f64 = 1e15;

/// Solves the minimum-cost assignment for an `n x m` cost matrix given as rows.
///
/// Returns `min(n, m)` `(row, col)` pairs sorted by row. The matrix is squared
/// internally with `PAD_COST` entries; pairs touching padding are dropped.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|row| row.len() == m));
    debug_assert!(cost.iter().flatten().all(|v| v.is_finite()));

    let size = n.max(m);
    let at = |i: usize, j: usize| -> f64 {
        if i < n && j < m {
            cost[i][j]
        } else {
            PAD_COST
        }
    };

    // 1-based potentials formulation; column 0 is a virtual source.
    let mut u = vec![0.0f64; size + 1];
    let mut v = vec![0.0f64; size + 1];
    let mut row_of = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut min_v = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_v[j] {
                    min_v[j] = reduced;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=size)
        .filter_map(|j| {
            let i = row_of[j];
            (i >= 1 && i <= n && j <= m).then(|| (i - 1, j - 1))
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Total cost of a set of pairs.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}
