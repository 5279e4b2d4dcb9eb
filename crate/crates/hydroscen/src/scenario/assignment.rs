//! Minimum-cost assignment (Hungarian method, O(n³) augmenting-path form)
//! with deterministic lexicographic tie-breaking.

use crate::error::{HydroError, Result};
use crate::linalg::Mat;

/// Total cost of a permutation, summed in row order. Tests compare this
/// against brute-force enumeration, so both sides add in the same order.
pub fn assignment_total(cost: &Mat, perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum()
}

/// Classic dual-potential Hungarian algorithm; returns per-row columns.
fn hungarian_min(cost: &Mat) -> Vec<usize> {
    let n = cost.rows();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to column j (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
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
    let mut ans = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            ans[p[j] - 1] = j - 1;
        }
    }
    ans
}

/// Optimal completion total when rows `0..prefix.len()` are already assigned,
/// row `prefix.len()` is forced to `col`, and the remaining rows take an
/// optimal assignment over the remaining columns.
fn forced_total(cost: &Mat, prefix: &[usize], col: usize, used: &[bool]) -> f64 {
    let n = cost.rows();
    let row = prefix.len();
    let mut perm = prefix.to_vec();
    perm.push(col);
    let rem_cols: Vec<usize> = (0..n).filter(|&c| !used[c] && c != col).collect();
    if row + 1 < n {
        let m = rem_cols.len();
        let mut sub = Mat::zeros(m, m);
        for (a, r) in (row + 1..n).enumerate() {
            for (b, &c) in rem_cols.iter().enumerate() {
                sub[(a, b)] = cost[(r, c)];
            }
        }
        for &b in &hungarian_min(&sub) {
            perm.push(rem_cols[b]);
        }
    }
    assignment_total(cost, &perm)
}

/// Returns the cost-minimizing permutation `perm[row] = column`.
/// Among equal-cost optima the lexicographically smallest permutation wins.
pub fn assignment_solve(cost: &Mat) -> Result<Vec<usize>> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(HydroError::Shape(format!(
            "assignment needs a square cost matrix, got {}x{}",
            cost.rows(),
            cost.cols()
        )));
    }
    if !cost.is_finite() {
        return Err(HydroError::Numeric("assignment cost contains NaN/Inf".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![0]);
    }

    let base = hungarian_min(cost);
    let mut best_total = assignment_total(cost, &base);

    // lexicographic refinement: fix rows top-down, keeping optimality
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut used = vec![false; n];
    for _row in 0..n {
        let tol = 1e-12 * (1.0 + best_total.abs());
        let mut fallback: Option<(f64, usize)> = None;
        let mut picked: Option<(usize, f64)> = None;
        for j in 0..n {
            if used[j] {
                continue;
            }
            let total = forced_total(cost, &chosen, j, &used);
            if total <= best_total + tol {
                picked = Some((j, total));
                break;
            }
            if fallback.map_or(true, |(ft, _)| total < ft) {
                fallback = Some((total, j));
            }
        }
        let (j, total) = match picked {
            Some(p) => p,
            // float drift across subproblems; take the cheapest completion
            None => {
                let (ft, fj) = fallback.expect("at least one free column");
                (fj, ft)
            }
        };
        best_total = total;
        used[j] = true;
        chosen.push(j);
    }
    Ok(chosen)
}


#[cfg(test)]
mod tests {
    use super::brute::brute_force_min;
    use super::*;
    use rand::Rng;

    #[test]
    fn two_by_two_prefers_identity() {
        let cost = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 1.0]);
        let perm = assignment_solve(&cost).unwrap();
        assert_eq!(perm, vec![0, 1]);
        assert_eq!(assignment_total(&cost, &perm), 2.0);
    }

    #[test]
    fn zero_diagonal_yields_identity() {
        let mut cost = Mat::from_vec(3, 3, vec![0.0, 5.0, 2.0, 1.0, 0.0, 9.0, 4.0, 7.0, 0.0]);
        let perm = assignment_solve(&cost).unwrap();
        assert_eq!(perm, vec![0, 1, 2]);
        assert_eq!(assignment_total(&cost, &perm), 0.0);
        // and on a full tie, lexicographic order wins
        for v in cost.as_mut_slice() {
            *v = 1.0;
        }
        assert_eq!(assignment_solve(&cost).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = crate::rngutil::substream(31, &[1]);
        for n in 2..=5usize {
            for _ in 0..40 {
                let cost = Mat::from_vec(
                    n,
                    n,
                    (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect(),
                );
                let perm = assignment_solve(&cost).unwrap();
                let (brute_total, _) = brute_force_min(&cost);
                assert_eq!(assignment_total(&cost, &perm), brute_total);
            }
        }
    }

    #[test]
    fn result_is_a_permutation() {
        let mut rng = crate::rngutil::substream(77, &[2]);
        for _ in 0..20 {
            let n = rng.random_range(1..=8usize);
            let cost = Mat::from_vec(
                n,
                n,
                (0..n * n).map(|_| rng.random_range(-5.0..5.0)).collect(),
            );
            let perm = assignment_solve(&cost).unwrap();
            let mut seen = vec![false; n];
            for &j in &perm {
                assert!(!seen[j]);
                seen[j] = true;
            }
            assert!(seen.into_iter().all(|s| s));
        }
    }

    #[test]
    fn ties_break_lexicographically() {
        // both diagonals cost 2
        let cost = Mat::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(assignment_solve(&cost).unwrap(), vec![0, 1]);
        // forcing row0 -> col1 is optimal too, but lex prefers col0
        let cost = Mat::from_vec(3, 3, vec![2.0, 2.0, 5.0, 2.0, 2.0, 5.0, 5.0, 5.0, 1.0]);
        assert_eq!(assignment_solve(&cost).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_input() {
        let cost = Mat::from_vec(2, 3, vec![0.0; 6]);
        assert!(assignment_solve(&cost).is_err());
        let cost = Mat::from_vec(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]);
        assert!(assignment_solve(&cost).is_err());
    }
}
