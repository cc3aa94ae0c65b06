//! Entropic optimal transport by Sinkhorn scaling in the log domain.
//!
//! The plan is `gamma_ij = exp((f_i + g_j - C_ij) / eps)`. Each sweep makes
//! the rows exact and then the columns; convergence is measured on the row
//! marginal after the column update, which comes for free from the next row
//! log-sum-exp.

use ndarray::{Array1, Array2, ArrayView2};

use super::{check_simplex, marginal_violation, CostMatrix, TransportPlan};
use crate::error::{Error, Result};

/// Dual potentials, in cost units.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Potentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

pub(crate) struct SinkhornOutput {
    pub gamma: Array2<f64>,
    pub potentials: Potentials,
    pub iterations: usize,
    pub violation: f64,
    pub converged: bool,
}

/// Solves `min <gamma, C> + eps * Σ gamma (log gamma - 1)` over couplings of
/// `a` and `b`.
///
/// Hitting `max_iter` is not an error: the returned plan has
/// `converged == false` and reports its marginal violation.
pub fn sinkhorn(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    check_simplex(a, "source")?;
    check_simplex(b, "target")?;
    if a.len() != cost.rows() || b.len() != cost.cols() {
        return Err(Error::DimensionMismatch {
            expected: cost.rows() * cost.cols(),
            actual: a.len() * b.len(),
        });
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be >= 1".into()));
    }
    let out = sinkhorn_log(cost.values().view(), a, b, epsilon, max_iter, tol, None);
    if !out.converged {
        log::warn!(
            "sinkhorn stopped after {} iterations with marginal violation {:.3e}",
            out.iterations,
            out.violation
        );
    }
    Ok(TransportPlan {
        gamma: out.gamma,
        a: Array1::from(a.to_vec()),
        b: Array1::from(b.to_vec()),
        iterations: out.iterations,
        marginal_violation: out.violation,
        converged: out.converged,
    })
}

/// Unchecked core. `warm` seeds the potentials (e.g. from a nearby problem).
///
/// A cold start on a cost range much wider than `eps` anneals: it solves a
/// sequence of problems with geometrically shrinking regularization, each
/// seeded by the last, before the final solve at `eps`. `max_iter` bounds
/// the final solve.
pub(crate) fn sinkhorn_log(
    cost: ArrayView2<f64>,
    a: &[f64],
    b: &[f64],
    eps: f64,
    max_iter: usize,
    tol: f64,
    warm: Option<Potentials>,
) -> SinkhornOutput {
    let (n, m) = cost.dim();
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let c: Vec<f64> = cost.iter().copied().collect();
    let mut ct = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            ct[j * n + i] = c[i * m + j];
        }
    }
    let problem = Scaled { c: &c, ct: &ct, n, m, log_a: &log_a, log_b: &log_b, a };
    let mut iterations = 0;
    let mut pot = match warm {
        Some(p) if p.f.len() == n && p.g.len() == m => p,
        _ => {
            let mut p = Potentials { f: vec![0.0; n], g: vec![0.0; m] };
            let range = c.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            let mut stage = range;
            if range > ANNEAL_RATIO * eps {
                while stage > eps {
                    iterations += problem.run(&mut p, stage, STAGE_ITER, STAGE_TOL).0;
                    stage *= 0.5;
                }
            }
            p
        }
    };
    let (final_iters, converged) = problem.run(&mut pot, eps, max_iter, tol);
    iterations += final_iters;

    let inv = 1.0 / eps;
    let mut gamma = Array2::zeros((n, m));
    for ((i, j), v) in gamma.indexed_iter_mut() {
        *v = ((pot.f[i] + pot.g[j] - c[i * m + j]) * inv).exp();
    }
    let violation = marginal_violation(
        gamma.view(),
        &Array1::from(a.to_vec()),
        &Array1::from(b.to_vec()),
    );
    SinkhornOutput {
        gamma,
        potentials: pot,
        iterations,
        violation,
        converged: converged || violation < tol,
    }
}

/// Cold starts anneal when the cost range exceeds this multiple of `eps`.
const ANNEAL_RATIO: f64 = 50.0;
const STAGE_ITER: usize = 200;
const STAGE_TOL: f64 = 1e-4;

struct Scaled<'a> {
    c: &'a [f64],
    ct: &'a [f64],
    n: usize,
    m: usize,
    log_a: &'a [f64],
    log_b: &'a [f64],
    a: &'a [f64],
}

impl Scaled<'_> {
    /// Alternating updates at regularization `eps` on potentials kept in cost
    /// units. Returns the sweep count and whether the row marginal met `tol`.
    fn run(&self, pot: &mut Potentials, eps: f64, max_iter: usize, tol: f64) -> (usize, bool) {
        let (n, m) = (self.n, self.m);
        let inv = 1.0 / eps;
        let mut row_lse = vec![0.0; n];
        let mut iterations = 0;
        loop {
            for i in 0..n {
                row_lse[i] = lse_minus(&pot.g, &self.c[i * m..(i + 1) * m], inv);
            }
            if iterations > 0 {
                let viol = (0..n)
                    .map(|i| (pot.f[i] * inv + row_lse[i]).exp() - self.a[i])
                    .fold(0.0_f64, |acc, v| acc.max(v.abs()));
                if viol < tol {
                    return (iterations, true);
                }
            }
            if iterations == max_iter {
                return (iterations, false);
            }
            for i in 0..n {
                pot.f[i] = eps * (self.log_a[i] - row_lse[i]);
            }
            for j in 0..m {
                pot.g[j] = eps * (self.log_b[j] - lse_minus(&pot.f, &self.ct[j * n..(j + 1) * n], inv));
            }
            iterations += 1;
        }
    }
}

/// `log Σ exp((pot - cost) / eps)` with `inv = 1 / eps`.
#[inline]
fn lse_minus(pot: &[f64], cost: &[f64], inv: f64) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for (p, c) in pot.iter().zip(cost) {
        mx = mx.max((p - c) * inv);
    }
    let s: f64 = pot.iter().zip(cost).map(|(p, c)| ((p - c) * inv - mx).exp()).sum();
    mx + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cm(v: Array2<f64>) -> CostMatrix {
        CostMatrix::from_array(v).unwrap()
    }

    #[test]
    fn diagonal_at_small_epsilon() {
        let c = cm(array![[0.0, 1.0], [1.0, 0.0]]);
        let p = sinkhorn(&c, &[0.5, 0.5], &[0.5, 0.5], 0.01, 1000, 1e-9).unwrap();
        assert!(p.converged);
        let g = p.gamma();
        assert!((g[[0, 0]] - 0.5).abs() < 1e-8);
        assert!((g[[1, 1]] - 0.5).abs() < 1e-8);
        assert!(g[[0, 1]] < 1e-8 && g[[1, 0]] < 1e-8);
    }

    #[test]
    fn single_cell() {
        let p = sinkhorn(&cm(array![[3.7]]), &[1.0], &[1.0], 0.01, 10, 1e-12).unwrap();
        assert!((p.gamma()[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn large_epsilon_is_independent_coupling() {
        let c = cm(array![[0.0, 1.0, 2.0], [1.5, 0.2, 0.7], [2.0, 1.0, 0.0]]);
        let a = [0.2, 0.3, 0.5];
        let b = [0.6, 0.1, 0.3];
        let eps = 100.0;
        let p = sinkhorn(&c, &a, &b, eps, 1000, 1e-12).unwrap();
        let outer: Array2<f64> = Array2::from_shape_fn((3, 3), |(i, j)| a[i] * b[j]);
        // first-order expansion in 1/eps around a b^T, using the doubly
        // centered cost; the remainder is O(1/eps^2)
        let cv = c.values();
        let row_mean: Vec<f64> = (0..3).map(|i| (0..3).map(|j| b[j] * cv[[i, j]]).sum()).collect();
        let col_mean: Vec<f64> = (0..3).map(|j| (0..3).map(|i| a[i] * cv[[i, j]]).sum()).collect();
        let grand: f64 = (0..3).map(|i| a[i] * row_mean[i]).sum();
        let first_order = Array2::from_shape_fn((3, 3), |(i, j)| {
            a[i] * b[j] * (1.0 - (cv[[i, j]] - row_mean[i] - col_mean[j] + grand) / eps)
        });
        let dev = (p.gamma() - &outer).mapv(f64::abs).fold(0.0_f64, |m, &x| m.max(x));
        let rem = (p.gamma() - &first_order).mapv(f64::abs).fold(0.0_f64, |m, &x| m.max(x));
        assert!(dev > 1e-4 && dev < 1e-2, "dev {dev}");
        assert!(rem < 2e-5, "remainder {rem}");
        let huge = sinkhorn(&c, &a, &b, 1e6, 1000, 1e-12).unwrap();
        let dev = (huge.gamma() - &outer).mapv(f64::abs).fold(0.0_f64, |m, &x| m.max(x));
        assert!(dev < 1e-6, "dev {dev}");
    }

    #[test]
    fn rejects_bad_marginals() {
        let c = cm(array![[0.0, 1.0], [1.0, 0.0]]);
        assert!(sinkhorn(&c, &[0.5, 0.6], &[0.5, 0.5], 0.1, 10, 1e-9).is_err());
        assert!(sinkhorn(&c, &[1.0, 0.0], &[0.5, 0.5], 0.1, 10, 1e-9).is_err());
        assert!(sinkhorn(&c, &[1.0], &[0.5, 0.5], 0.1, 10, 1e-9).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let c = cm(array![[0.0, 2.0, 1.0], [2.0, 0.0, 0.3], [0.1, 0.9, 0.0]]);
        let p = sinkhorn(&c, &[0.2, 0.3, 0.5], &[0.6, 0.1, 0.3], 1e-3, 1, 1e-14).unwrap();
        assert!(!p.converged);
        assert!(p.marginal_violation > 1e-14);
    }

    #[test]
    fn warm_start_reaches_same_plan() {
        let c = array![[0.0, 0.4, 1.0], [0.3, 0.0, 0.8], [1.2, 0.5, 0.1]];
        let a = [0.3, 0.3, 0.4];
        let b = [0.2, 0.5, 0.3];
        let cold = sinkhorn_log(c.view(), &a, &b, 0.05, 5000, 1e-13, None);
        let warm = sinkhorn_log(c.view(), &a, &b, 0.05, 5000, 1e-13, Some(cold.potentials.clone()));
        assert!(warm.iterations <= 1);
        let d = (&cold.gamma - &warm.gamma).mapv(f64::abs).sum();
        assert!(d < 1e-12);
    }
}
