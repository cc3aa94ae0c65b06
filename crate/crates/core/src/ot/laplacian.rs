//! Structure-preserving entropic transport.
//!
//! Minimizes
//!
//! ```text
//! F(γ) = <γ, C> + ε Σ γ (log γ - 1) + λ Ω(γ)
//! Ω(γ) = Σ_{i,i'} S_ii' ‖T_i - T_i'‖²,   T = diag(a)^-1 γ Z
//! ```
//!
//! where `T_i` is the barycentric image of source point `i` in the target
//! cloud `Z` and `S` is a mutual k-NN Gaussian similarity graph over the
//! source points. `Ω` is quadratic in `γ`, so generalized conditional
//! gradient applies: linearize `Ω` at the current plan, solve the entropic
//! subproblem exactly with Sinkhorn, then line-search the segment between the
//! two plans on the full objective. Every accepted step lowers `F`.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::sinkhorn::{sinkhorn_log, Potentials};
use super::{check_simplex, marginal_violation, CostMatrix, OTConfig, TransportPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LaplacianSolution {
    pub plan: TransportPlan,
    /// `F` at the initial plan and after every accepted outer step.
    pub objective_trace: Vec<f64>,
    /// `<γ, C>` of the final plan.
    pub transport_cost: f64,
}

/// Symmetric mutual k-NN graph with Gaussian weights `exp(-d² / 2h²)`, `h`
/// the median k-NN distance.
pub fn similarity_graph(points: ArrayView2<f64>, k_nn: usize) -> Array2<f64> {
    let n = points.nrows();
    let mut s = Array2::zeros((n, n));
    if n < 2 || k_nn == 0 {
        return s;
    }
    let k = k_nn.min(n - 1);
    let dist = |i: usize, j: usize| -> f64 {
        points
            .row(i)
            .iter()
            .zip(points.row(j).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut knn: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut knn_dists = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)).collect();
        others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        others.truncate(k);
        knn_dists.extend(others.iter().map(|o| o.0));
        knn.push(others.into_iter().map(|o| o.1).collect());
    }
    knn_dists.sort_by(f64::total_cmp);
    let h = knn_dists[knn_dists.len() / 2];
    for i in 0..n {
        for &j in &knn[i] {
            if j > i && knn[j].contains(&i) {
                let d = dist(i, j);
                let w = if h > 0.0 { (-(d * d) / (2.0 * h * h)).exp() } else { 1.0 };
                s[[i, j]] = w;
                s[[j, i]] = w;
            }
        }
    }
    s
}

struct Problem<'a> {
    cost: &'a Array2<f64>,
    a: &'a [f64],
    targets: ArrayView2<'a, f64>,
    laplacian: Array2<f64>,
    epsilon: f64,
    lambda: f64,
}

impl Problem<'_> {
    fn images(&self, gamma: &Array2<f64>) -> Array2<f64> {
        let mut y = gamma.dot(&self.targets);
        for (mut row, &ai) in y.rows_mut().into_iter().zip(self.a) {
            row.mapv_inplace(|v| v / ai);
        }
        y
    }

    /// `Ω(γ) = 2 tr(Yᵀ L Y)`.
    fn omega(&self, gamma: &Array2<f64>) -> f64 {
        let y = self.images(gamma);
        2.0 * (&y * &self.laplacian.dot(&y)).sum()
    }

    /// `∇Ω = diag(a)^-1 (4 L Y) Zᵀ`.
    fn omega_grad(&self, gamma: &Array2<f64>) -> Array2<f64> {
        let y = self.images(gamma);
        let mut ly = self.laplacian.dot(&y) * 4.0;
        for (mut row, &ai) in ly.rows_mut().into_iter().zip(self.a) {
            row.mapv_inplace(|v| v / ai);
        }
        ly.dot(&self.targets.t())
    }

    fn objective(&self, gamma: &Array2<f64>) -> f64 {
        let linear = (gamma * self.cost).sum();
        let entropy: f64 = gamma.iter().map(|&g| xlogx(g) - g).sum();
        let reg = if self.lambda > 0.0 { self.lambda * self.omega(gamma) } else { 0.0 };
        linear + self.epsilon * entropy + reg
    }
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Solves the Laplacian-regularized entropic problem.
///
/// `source_points` build the similarity graph; `target_points` are the atoms
/// the barycentric images live among.
pub fn laplacian_reg_ot(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    source_points: ArrayView2<f64>,
    target_points: ArrayView2<f64>,
    config: &OTConfig,
) -> Result<LaplacianSolution> {
    config.validate()?;
    check_simplex(a, "source")?;
    check_simplex(b, "target")?;
    let (n, m) = (cost.rows(), cost.cols());
    if a.len() != n || b.len() != m || source_points.nrows() != n || target_points.nrows() != m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            actual: a.len() * b.len(),
        });
    }
    let s = similarity_graph(source_points, config.k_nn);
    let degree = s.sum_axis(Axis(1));
    let laplacian = Array2::from_diag(&degree) - &s;
    let problem = Problem {
        cost: cost.values(),
        a,
        targets: target_points,
        laplacian,
        epsilon: config.epsilon,
        lambda: config.lambda,
    };

    let first = sinkhorn_log(cost.values().view(), a, b, config.epsilon, config.max_iter, config.tol, None);
    let mut all_converged = first.converged;
    let mut iterations = first.iterations;
    let mut gamma = first.gamma;
    let mut warm: Potentials = first.potentials;
    let mut value = problem.objective(&gamma);
    let mut trace = vec![value];

    if config.lambda > 0.0 && s.iter().any(|&w| w > 0.0) {
        for _ in 0..config.outer_iter {
            let grad = problem.omega_grad(&gamma);
            let linearized = cost.values() + &(grad.clone() * config.lambda);
            let sub = sinkhorn_log(
                linearized.view(),
                a,
                b,
                config.epsilon,
                config.max_iter,
                config.tol,
                Some(warm.clone()),
            );
            all_converged &= sub.converged;
            iterations += sub.iterations;
            warm = sub.potentials;
            let dir = &sub.gamma - &gamma;
            let Some(alpha) = line_search(&problem, &gamma, &dir, &grad) else {
                break;
            };
            let candidate = &gamma + &(dir * alpha);
            let cand_value = problem.objective(&candidate);
            if !(cand_value <= value) {
                break;
            }
            let gain = value - cand_value;
            gamma = candidate;
            value = cand_value;
            trace.push(value);
            if gain <= 1e-14 * value.abs().max(1.0) {
                break;
            }
        }
    }

    let a_arr = Array1::from(a.to_vec());
    let b_arr = Array1::from(b.to_vec());
    let violation = marginal_violation(gamma.view(), &a_arr, &b_arr);
    let transport_cost = (&gamma * cost.values()).sum();
    if !all_converged {
        log::warn!("laplacian transport: an inner sinkhorn solve hit its iteration cap (violation {violation:.3e})");
    }
    Ok(LaplacianSolution {
        plan: TransportPlan {
            gamma,
            a: a_arr,
            b: b_arr,
            iterations,
            marginal_violation: violation,
            converged: all_converged || violation < config.tol,
        },
        objective_trace: trace,
        transport_cost,
    })
}

/// Minimizes the convex `F(γ + α d)` over `α ∈ [0, 1]` by bisection on the
/// derivative. Returns `None` when `d` is not a descent direction.
fn line_search(p: &Problem<'_>, gamma: &Array2<f64>, dir: &Array2<f64>, grad: &Array2<f64>) -> Option<f64> {
    let lin = (dir * p.cost).sum();
    let reg_slope = p.lambda * (grad * dir).sum();
    let reg_curv = if p.lambda > 0.0 { 2.0 * p.lambda * p.omega(dir) } else { 0.0 };
    let deriv = |alpha: f64| -> f64 {
        let ent: f64 = gamma
            .iter()
            .zip(dir.iter())
            .map(|(&g, &d)| {
                let x = g + alpha * d;
                if d == 0.0 {
                    0.0
                } else {
                    d * x.max(1e-300).ln()
                }
            })
            .sum();
        lin + reg_slope + alpha * reg_curv + p.epsilon * ent
    };
    if !(deriv(0.0) < 0.0) {
        return None;
    }
    if deriv(1.0) <= 0.0 {
        return Some(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{cost_cosine, sinkhorn, uniform_weights};
    use ndarray::array;

    #[test]
    fn graph_is_symmetric_and_mutual() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [5.1, 0.0], [20.0, 0.0]];
        let s = similarity_graph(pts.view(), 1);
        assert_eq!(s, s.t().to_owned());
        assert!(s[[0, 1]] > 0.0 && s[[2, 3]] > 0.0);
        // point 4's nearest neighbor is 3, but 3's is 2: not mutual
        assert_eq!(s.row(4).sum(), 0.0);
        assert_eq!(s[[0, 0]], 0.0);
    }

    #[test]
    fn lambda_zero_is_plain_sinkhorn() {
        let src = array![[1.0, 0.0, 0.0], [0.8, 0.6, 0.0], [0.0, 1.0, 0.0]];
        let tgt = array![[0.9, 0.1, 0.2], [0.1, 0.9, 0.3]];
        let c = cost_cosine(src.view(), tgt.view()).unwrap();
        let a = uniform_weights(3).to_vec();
        let b = uniform_weights(2).to_vec();
        let cfg = OTConfig { lambda: 0.0, ..Default::default() };
        let sol = laplacian_reg_ot(&c, &a, &b, src.view(), tgt.view(), &cfg).unwrap();
        let plain = sinkhorn(&c, &a, &b, cfg.epsilon, cfg.max_iter, cfg.tol).unwrap();
        assert!((sol.transport_cost - plain.cost(&c)).abs() < 1e-8);
    }

    #[test]
    fn omega_gradient_matches_finite_differences() {
        let src = array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.95]];
        let tgt = array![[0.7, 0.7], [1.0, 0.2], [0.3, 1.0]];
        let a = [0.25; 4];
        let s = similarity_graph(src.view(), 2);
        let lap = Array2::from_diag(&s.sum_axis(Axis(1))) - &s;
        let cost = Array2::zeros((4, 3));
        let p = Problem { cost: &cost, a: &a, targets: tgt.view(), laplacian: lap, epsilon: 0.1, lambda: 1.0 };
        let gamma = Array2::from_shape_fn((4, 3), |(i, j)| 0.02 + 0.01 * ((i * 3 + j) % 5) as f64);
        let g = p.omega_grad(&gamma);
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let mut up = gamma.clone();
                up[[i, j]] += h;
                let mut dn = gamma.clone();
                dn[[i, j]] -= h;
                let fd = (p.omega(&up) - p.omega(&dn)) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[[i, j]]);
            }
        }
    }
}
