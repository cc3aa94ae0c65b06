use ndarray::{Array2, ArrayView2};

use super::TransportPlan;
use crate::error::{Error, Result};

/// Maps each source atom to the plan-weighted mean of the targets:
/// `out_i = Σ_j γ_ij z_j / Σ_j γ_ij`.
pub fn barycentric_projection(plan: &TransportPlan, targets: ArrayView2<f64>) -> Result<Array2<f64>> {
    let gamma = plan.gamma();
    if gamma.ncols() != targets.nrows() {
        return Err(Error::DimensionMismatch {
            expected: gamma.ncols(),
            actual: targets.nrows(),
        });
    }
    let mut out = gamma.dot(&targets);
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mass: f64 = gamma.row(i).sum();
        if !(mass > 0.0) {
            return Err(Error::DegenerateRow { row: i });
        }
        row.mapv_inplace(|v| v / mass);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn identity_coupling() {
        let a = array![0.2, 0.8];
        let plan = TransportPlan::new(Array2::from_diag(&a), a.clone(), a.clone()).unwrap();
        let z = array![[1.0, 2.0], [-3.0, 0.5]];
        let out = barycentric_projection(&plan, z.view()).unwrap();
        assert!((&out - &z).mapv(f64::abs).sum() < 1e-15);
    }

    #[test]
    fn midpoint() {
        let plan = TransportPlan::new(
            array![[0.25, 0.25], [0.25, 0.25]],
            array![0.5, 0.5],
            array![0.5, 0.5],
        )
        .unwrap();
        let z = array![[0.0, 0.0], [2.0, 0.0]];
        let out = barycentric_projection(&plan, z.view()).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn independent_coupling_maps_to_target_mean() {
        let a = array![0.5, 0.3, 0.2];
        let b = array![0.25, 0.25, 0.5];
        let g = Array2::from_shape_fn((3, 3), |(i, j)| a[i] * b[j]);
        let plan = TransportPlan::new(g, a, b.clone()).unwrap();
        let z = array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]];
        let mean: Array1<f64> = z.t().dot(&b);
        let out = barycentric_projection(&plan, z.view()).unwrap();
        for row in out.rows() {
            assert!((&row - &mean).mapv(f64::abs).sum() < 1e-15);
        }
    }

    #[test]
    fn zero_row_is_reported() {
        let plan = TransportPlan {
            gamma: array![[0.0, 0.0], [0.5, 0.5]],
            a: array![0.5, 0.5],
            b: array![0.5, 0.5],
            iterations: 0,
            marginal_violation: 0.5,
            converged: false,
        };
        let err = barycentric_projection(&plan, array![[1.0], [2.0]].view()).unwrap_err();
        assert!(matches!(err, Error::DegenerateRow { row: 0 }));
    }
}
