//! Maximum-weight bipartite assignment (Kuhn–Munkres with potentials).

/// Minimum-cost assignment of every row to a distinct column; needs
/// `rows <= cols`. Returns the column of each row.
fn min_cost_rows(cost: &[Vec<i64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    let m = cols;
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    // p[j]: row matched to column j (1-based, 0 = free); way: augmenting path.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Injective row→column map maximizing total weight on a rectangular matrix.
/// Rows left over when there are more rows than columns map to `None`.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<Option<usize>> {
    let r = weights.len();
    let c = weights.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return vec![None; r];
    }
    let max = weights.iter().flatten().copied().max().unwrap_or(0);
    if r <= c {
        let cost: Vec<Vec<i64>> = weights.iter().map(|row| row.iter().map(|w| max - w).collect()).collect();
        min_cost_rows(&cost, c).into_iter().map(Some).collect()
    } else {
        let cost: Vec<Vec<i64>> = (0..c).map(|j| (0..r).map(|i| max - weights[i][j]).collect()).collect();
        let mut out = vec![None; r];
        for (j, i) in min_cost_rows(&cost, r).into_iter().enumerate() {
            out[i] = Some(j);
        }
        out
    }
}
