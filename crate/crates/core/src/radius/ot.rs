//! Exact discrete optimal transport.

/// Minimum-cost perfect matching on a square cost matrix (row-major,
/// `n x n`) by the shortest augmenting path method with potentials.
/// Returns `assignment[row] = column` and the total cost.
pub fn hungarian(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based potentials; column 0 is a virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
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
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    (assignment, total)
}

/// Exact transportation problem between weights `a` (rows) and `b`
/// (columns) with cost matrix `cost` (row-major `n x m`), solved by
/// successive shortest paths. Both weight vectors must sum to the same
/// total. Returns the optimal cost.
pub fn transport(cost: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let m = b.len();
    assert_eq!(cost.len(), n * m);
    let total: f64 = a.iter().sum();
    let eps = 1e-14 * total.max(1.0);
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    let mut flow = vec![0.0; n * m];
    // potentials keep reduced costs of residual arcs non-negative
    let mut pi_row = vec![0.0; n];
    let mut pi_col: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| cost[i * m + j]).fold(f64::INFINITY, f64::min))
        .collect();
    let nodes = n + m;
    let mut dist = vec![0.0; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];
    loop {
        if supply.iter().all(|&s| s <= eps) || demand.iter().all(|&d| d <= eps) {
            break;
        }
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        for i in 0..n {
            if supply[i] > eps {
                dist[i] = 0.0;
            }
        }
        // dense Dijkstra over rows 0..n and columns n..n+m
        loop {
            let mut k = usize::MAX;
            let mut best = f64::INFINITY;
            for (idx, &d) in dist.iter().enumerate() {
                if !done[idx] && d < best {
                    best = d;
                    k = idx;
                }
            }
            if k == usize::MAX {
                break;
            }
            done[k] = true;
            if k < n {
                let i = k;
                for j in 0..m {
                    let rc = (cost[i * m + j] + pi_row[i] - pi_col[j]).max(0.0);
                    let nd = best + rc;
                    if nd < dist[n + j] {
                        dist[n + j] = nd;
                        prev[n + j] = i;
                    }
                }
            } else {
                let j = k - n;
                for i in 0..n {
                    if flow[i * m + j] > eps {
                        let rc = (-cost[i * m + j] - pi_row[i] + pi_col[j]).max(0.0);
                        let nd = best + rc;
                        if nd < dist[i] {
                            dist[i] = nd;
                            prev[i] = k;
                        }
                    }
                }
            }
        }
        // nearest column with unmet demand
        let mut sink = usize::MAX;
        let mut best = f64::INFINITY;
        for j in 0..m {
            if demand[j] > eps && dist[n + j] < best {
                best = dist[n + j];
                sink = j;
            }
        }
        if sink == usize::MAX {
            break;
        }
        for i in 0..n {
            pi_row[i] += dist[i].min(best);
        }
        for j in 0..m {
            pi_col[j] += dist[n + j].min(best);
        }
        // walk back to find the bottleneck
        let mut amount = demand[sink];
        let mut node = n + sink;
        loop {
            let p = prev[node];
            if node >= n {
                if p == usize::MAX {
                    break;
                }
                node = p;
            } else {
                if p == usize::MAX {
                    amount = amount.min(supply[node]);
                    break;
                }
                let j = p - n;
                amount = amount.min(flow[node * m + j]);
                node = p;
            }
        }
        let mut node = n + sink;
        loop {
            let p = prev[node];
            if node >= n {
                let j = node - n;
                flow[p * m + j] += amount;
                node = p;
            } else {
                if p == usize::MAX {
                    supply[node] -= amount;
                    break;
                }
                let j = p - n;
                flow[node * m + j] -= amount;
                node = p;
            }
        }
        demand[sink] -= amount;
    }
    flow.iter().zip(cost).map(|(f, c)| f * c).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute(cost: &[f64], n: usize) -> f64 {
        permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn small_assignment() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (asg, total) = hungarian(&cost, 3);
        assert_eq!(total, 5.0);
        assert_eq!(asg, vec![1, 0, 2]);
    }

    #[test]
    fn transport_splits_mass() {
        // one row of mass 1 against two columns of mass 1/2
        let v = transport(&[1.0, 3.0], &[1.0], &[0.5, 0.5]);
        assert!((v - 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn hungarian_is_optimal(n in 1usize..6, seed in prop::collection::vec(0.0f64..10.0, 36)) {
            let cost = &seed[..n * n];
            let (_, total) = hungarian(cost, n);
            prop_assert!((total - brute(cost, n)).abs() < 1e-9);
        }

        #[test]
        fn transport_agrees_with_assignment_on_uniform(n in 1usize..6, seed in prop::collection::vec(0.0f64..10.0, 36)) {
            let cost = &seed[..n * n];
            let w = vec![1.0 / n as f64; n];
            let (_, total) = hungarian(cost, n);
            prop_assert!((transport(cost, &w, &w) - total / n as f64).abs() < 1e-9);
        }
    }
}
