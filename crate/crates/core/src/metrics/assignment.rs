//! Exact linear assignment by shortest augmenting paths with dual potentials.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Minimum-cost perfect matching of a square cost matrix.
///
/// Returns `(assignment, total)` with row `i` matched to column
/// `assignment[i]`. Runs in `O(n³)`.
pub fn solve_assignment(cost: ArrayView2<f64>) -> Result<(Vec<usize>, f64)> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::Internal("assignment needs a square cost matrix".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Internal("assignment cost matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based arrays; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_v = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        min_v.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if reduced < min_v[j] {
                    min_v[j] = reduced;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                return Err(Error::Internal("assignment solver found no augmenting path".into()));
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok((assignment, total))
}

/// Pairwise squared Euclidean distances between the rows of `p` and `q`.
pub fn squared_distances(p: ArrayView2<f64>, q: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((p.nrows(), q.nrows()), |(i, j)| {
        p.row(i)
            .iter()
            .zip(q.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(cost: &Array2<f64>) -> f64 {
        fn go(cost: &Array2<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            let n = cost.nrows();
            if row == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[[row, j]] + go(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(cost, 0, &mut vec![false; cost.nrows()])
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..=8, entries in prop::collection::vec(-5.0f64..5.0, 64)) {
            let cost = Array2::from_shape_fn((n, n), |(i, j)| entries[i * 8 + j]);
            let (perm, total) = solve_assignment(cost.view()).unwrap();
            let mut seen = perm.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            prop_assert!((total - brute_force(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn swapped_points_match_back() {
        let p = ndarray::array![[0.0, 0.0], [1.0, 0.0]];
        let q = ndarray::array![[1.0, 0.0], [0.0, 0.0]];
        let (perm, total) = solve_assignment(squared_distances(p.view(), q.view()).view()).unwrap();
        assert_eq!(perm, vec![1, 0]);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(solve_assignment(Array2::zeros((2, 3)).view()).is_err());
        assert!(solve_assignment(ndarray::array![[f64::NAN]].view()).is_err());
    }
}
