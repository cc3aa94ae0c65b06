//! Discrete optimal transport.
//!
//! Costs are dense `n_s x n_t` matrices; plans are nonnegative couplings with
//! prescribed marginals. Entropic problems are solved with log-domain
//! Sinkhorn scaling, the structure-preserving variant with generalized
//! conditional gradient, and tiny instances exactly with the transportation
//! simplex (used as an oracle in tests).

mod cost;
mod exact;
mod laplacian;
mod projection;
mod sinkhorn;

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cost::{cost_cosine, cost_sqeuclidean, CostMatrix, CostMetric};
pub use exact::{exact_ot_small, EXACT_MAX_CELLS};
pub use laplacian::{laplacian_reg_ot, similarity_graph, LaplacianSolution};
pub use projection::barycentric_projection;
pub use sinkhorn::sinkhorn;
pub(crate) use sinkhorn::{sinkhorn_log, Potentials};

/// Tolerance on `Σa = 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OTConfig {
    /// Entropic regularization.
    pub epsilon: f64,
    /// Strength of the Laplacian structure term.
    pub lambda: f64,
    /// Neighbors per point in the mutual k-NN similarity graph.
    pub k_nn: usize,
    pub max_iter: usize,
    /// Stop when the max marginal violation drops below this.
    pub tol: f64,
    /// Conditional-gradient outer iterations.
    pub outer_iter: usize,
}

impl Default for OTConfig {
    fn default() -> Self {
        OTConfig {
            epsilon: 0.01,
            lambda: 100.0,
            k_nn: 3,
            max_iter: 1000,
            tol: 1e-9,
            outer_iter: 10,
        }
    }
}

impl OTConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.max_iter == 0 || self.outer_iter == 0 {
            return Err(Error::Config("iteration counts must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("marginal tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// A coupling `gamma` between source weights `a` and target weights `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    gamma: Array2<f64>,
    a: Array1<f64>,
    b: Array1<f64>,
    /// Solver iterations spent (Sinkhorn sweeps or simplex pivots).
    pub iterations: usize,
    /// Max-norm violation of both marginal constraints.
    pub marginal_violation: f64,
    /// False when the solver hit its iteration cap before reaching tolerance.
    pub converged: bool,
}

impl TransportPlan {
    /// Wraps a coupling, checking nonnegativity and the marginal weights.
    pub fn new(gamma: Array2<f64>, a: Array1<f64>, b: Array1<f64>) -> Result<Self> {
        check_simplex(a.as_slice().unwrap_or(&a.to_vec()), "source")?;
        check_simplex(b.as_slice().unwrap_or(&b.to_vec()), "target")?;
        if gamma.dim() != (a.len(), b.len()) {
            return Err(Error::DimensionMismatch {
                expected: a.len() * b.len(),
                actual: gamma.len(),
            });
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Degenerate("plan has negative or non-finite entries".into()));
        }
        let marginal_violation = marginal_violation(gamma.view(), &a, &b);
        Ok(TransportPlan {
            gamma,
            a,
            b,
            iterations: 0,
            marginal_violation,
            converged: true,
        })
    }

    pub fn gamma(&self) -> &Array2<f64> {
        &self.gamma
    }

    pub fn source_weights(&self) -> &Array1<f64> {
        &self.a
    }

    pub fn target_weights(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn dim(&self) -> (usize, usize) {
        self.gamma.dim()
    }

    /// `<gamma, C>`.
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        (&self.gamma * cost.values()).sum()
    }

    pub fn transposed(&self) -> TransportPlan {
        TransportPlan {
            gamma: self.gamma.t().to_owned(),
            a: self.b.clone(),
            b: self.a.clone(),
            ..*self
        }
    }

    /// `i,j,gamma_ij` rows for debugging dumps.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,gamma_ij\n");
        for ((i, j), g) in self.gamma.indexed_iter() {
            let _ = writeln!(s, "{i},{j},{g:e}");
        }
        s
    }
}

pub(crate) fn marginal_violation(gamma: ArrayView2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let rows = gamma.sum_axis(ndarray::Axis(1));
    let cols = gamma.sum_axis(ndarray::Axis(0));
    let r = rows.iter().zip(a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let c = cols.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    r.max(c)
}

pub(crate) fn check_simplex(w: &[f64], which: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Marginal(format!("{which} weights are empty")));
    }
    if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Marginal(format!("{which} weights must be strictly positive")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Marginal(format!("{which} weights sum to {s}, not 1")));
    }
    Ok(())
}

pub fn uniform_weights(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn plan_checks() {
        let a = array![0.5, 0.5];
        let p = TransportPlan::new(array![[0.5, 0.0], [0.0, 0.5]], a.clone(), a.clone()).unwrap();
        assert!(p.marginal_violation < 1e-15);
        assert!(TransportPlan::new(array![[0.6, -0.1], [0.0, 0.5]], a.clone(), a.clone()).is_err());
        assert!(TransportPlan::new(array![[0.5, 0.0], [0.0, 0.5]], array![0.7, 0.7], a.clone()).is_err());
        let t = p.transposed();
        assert_eq!(t.gamma(), &array![[0.5, 0.0], [0.0, 0.5]]);
        assert!(p.to_csv().starts_with("i,j,gamma_ij\n0,0,5e-1"));
    }
}
