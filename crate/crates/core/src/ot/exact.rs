//! Exact transport for tiny instances: the transportation simplex.
//!
//! The basis is a spanning tree of the bipartite row/column graph with
//! `n + m - 1` cells, started from the north-west corner rule. Entering and
//! leaving cells follow Bland's smallest-index rule, which rules out cycling
//! on degenerate bases.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use super::{check_simplex, marginal_violation, CostMatrix, TransportPlan};
use crate::error::{Error, Result};

pub const EXACT_MAX_CELLS: usize = 64;

const MAX_PIVOTS: usize = 100_000;

pub fn exact_ot_small(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<TransportPlan> {
    let (n, m) = (cost.rows(), cost.cols());
    if n * m > EXACT_MAX_CELLS {
        return Err(Error::TooLarge { rows: n, cols: m });
    }
    check_simplex(a, "source")?;
    check_simplex(b, "target")?;
    if a.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            actual: a.len() * b.len(),
        });
    }
    let c = cost.values();
    let scale = c.iter().fold(1.0_f64, |acc, &v| acc.max(v));
    let rc_tol = 1e-13 * scale;

    // north-west corner
    let mut x = Array2::<f64>::zeros((n, m));
    let mut basic = Array2::from_elem((n, m), false);
    let (mut s, mut d) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let q = s[i].min(d[j]);
        x[[i, j]] = q;
        basic[[i, j]] = true;
        if i == n - 1 && j == m - 1 {
            break;
        }
        let row_done = s[i] <= d[j];
        s[i] -= q;
        d[j] -= q;
        if (row_done && i < n - 1) || j == m - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }

    let mut pivots = 0;
    loop {
        let (u, v) = potentials(c, &basic);
        let entering = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .find(|&(i, j)| !basic[[i, j]] && c[[i, j]] - u[i] - v[j] < -rc_tol);
        let Some((ei, ej)) = entering else { break };
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(Error::Degenerate("transportation simplex failed to terminate".into()));
        }

        // tree path from column ej back to row ei; cells alternate -,+,-,...
        let path = tree_path(&basic, n + ej, ei);
        let minus: Vec<(usize, usize)> = path.iter().step_by(2).copied().collect();
        let plus: Vec<(usize, usize)> = path.iter().skip(1).step_by(2).copied().collect();
        let theta = minus.iter().map(|&(i, j)| x[[i, j]]).fold(f64::INFINITY, f64::min);
        let leaving = minus
            .iter()
            .copied()
            .filter(|&(i, j)| x[[i, j]] == theta)
            .min()
            .expect("cycle has a minus cell");
        for &(i, j) in &plus {
            x[[i, j]] += theta;
        }
        for &(i, j) in &minus {
            x[[i, j]] = (x[[i, j]] - theta).max(0.0);
        }
        x[[ei, ej]] = theta;
        basic[[ei, ej]] = true;
        basic[leaving] = false;
        x[leaving] = 0.0;
    }

    let a = Array1::from(a.to_vec());
    let b = Array1::from(b.to_vec());
    let violation = marginal_violation(x.view(), &a, &b);
    Ok(TransportPlan {
        gamma: x,
        a,
        b,
        iterations: pivots,
        marginal_violation: violation,
        converged: true,
    })
}

/// Duals with `u_0 = 0` and `u_i + v_j = c_ij` on basic cells.
fn potentials(c: &Array2<f64>, basic: &Array2<bool>) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = c.dim();
    let mut u = vec![f64::NAN; n];
    let mut v = vec![f64::NAN; m];
    u[0] = 0.0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        if node < n {
            for j in 0..m {
                if basic[[node, j]] && v[j].is_nan() {
                    v[j] = c[[node, j]] - u[node];
                    queue.push_back(n + j);
                }
            }
        } else {
            let j = node - n;
            for i in 0..n {
                if basic[[i, j]] && u[i].is_nan() {
                    u[i] = c[[i, j]] - v[j];
                    queue.push_back(i);
                }
            }
        }
    }
    (u, v)
}

/// Cells along the basis-tree path from node `from` to row node `to_row`.
fn tree_path(basic: &Array2<bool>, from: usize, to_row: usize) -> Vec<(usize, usize)> {
    let (n, m) = basic.dim();
    let mut parent = vec![usize::MAX; n + m];
    parent[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        if node == to_row {
            break;
        }
        let neighbors: Vec<usize> = if node < n {
            (0..m).filter(|&j| basic[[node, j]]).map(|j| n + j).collect()
        } else {
            (0..n).filter(|&i| basic[[i, node - n]]).collect()
        };
        for nb in neighbors {
            if parent[nb] == usize::MAX {
                parent[nb] = node;
                queue.push_back(nb);
            }
        }
    }
    // walk back from to_row to from, then reverse so cells start at `from`
    let mut cells = Vec::new();
    let mut node = to_row;
    while node != from {
        let p = parent[node];
        let cell = if node < n { (node, p - n) } else { (p, node - n) };
        cells.push(cell);
        node = p;
    }
    cells.reverse();
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn solve(c: Array2<f64>, a: &[f64], b: &[f64]) -> TransportPlan {
        let c = CostMatrix::from_array(c).unwrap();
        exact_ot_small(&c, a, b).unwrap()
    }

    #[test]
    fn two_by_two_unbalanced_weights() {
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        let p = solve(c.clone(), &[0.7, 0.3], &[0.4, 0.6]);
        let g = p.gamma();
        for (got, want) in g.iter().zip([0.4, 0.3, 0.0, 0.3]) {
            assert!((got - want).abs() < 1e-15);
        }
        let cost = p.cost(&CostMatrix::from_array(c).unwrap());
        assert!((cost - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_point() {
        let p = solve(array![[0.0]], &[1.0], &[1.0]);
        assert_eq!(p.gamma()[[0, 0]], 1.0);
    }

    #[test]
    fn permutation_cost() {
        let c = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let w = [1.0 / 3.0; 3];
        let p = solve(c.clone(), &w, &w);
        let cost = p.cost(&CostMatrix::from_array(c).unwrap());
        assert!(cost.abs() < 1e-12);
        for i in 0..3 {
            assert!((p.gamma()[[i, i]] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_anti_diagonal() {
        // north-west corner starts on the worst diagonal with a degenerate basis
        let c = Array2::from_shape_fn((4, 4), |(i, j)| if i + j == 3 { 0.0 } else { 1.0 + (i * j) as f64 });
        let w = [0.25; 4];
        let p = solve(c.clone(), &w, &w);
        assert!(p.cost(&CostMatrix::from_array(c).unwrap()).abs() < 1e-12);
        assert!(p.marginal_violation < 1e-15);
    }

    #[test]
    fn size_limit() {
        let c = CostMatrix::from_array(Array2::zeros((9, 8))).unwrap();
        let err = exact_ot_small(&c, &[1.0 / 9.0; 9], &[0.125; 8]).unwrap_err();
        assert!(matches!(err, Error::TooLarge { .. }));
    }
}
