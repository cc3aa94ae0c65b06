use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostMetric {
    /// `1 - cos(x, y)`, in `[0, 2]`.
    Cosine,
    /// `‖x - y‖²`.
    SquaredEuclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
    metric: CostMetric,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>, metric: CostMetric) -> Result<Self> {
        for &v in values.iter() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Degenerate(format!("cost entry {v} is negative or non-finite")));
            }
            if metric == CostMetric::Cosine && v > 2.0 {
                return Err(Error::Degenerate(format!("cosine cost entry {v} exceeds 2")));
            }
        }
        Ok(CostMatrix { values, metric })
    }

    /// Wraps an arbitrary nonnegative matrix, tagged squared Euclidean.
    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        CostMatrix::new(values, CostMetric::SquaredEuclidean)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn metric(&self) -> CostMetric {
        self.metric
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn transposed(&self) -> CostMatrix {
        CostMatrix {
            values: self.values.t().to_owned(),
            metric: self.metric,
        }
    }
}

fn check_dims(x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            actual: y.ncols(),
        });
    }
    Ok(())
}

/// Cosine distance between the rows of `x` and the rows of `y`.
pub fn cost_cosine(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<CostMatrix> {
    check_dims(&x, &y)?;
    let norms = |m: &ArrayView2<f64>, what: &str| -> Result<Vec<f64>> {
        m.rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let n = r.dot(&r).sqrt();
                if n > 0.0 {
                    Ok(n)
                } else {
                    Err(Error::Degenerate(format!("{what} vector {i} has zero norm")))
                }
            })
            .collect()
    };
    let nx = norms(&x, "source")?;
    let ny = norms(&y, "target")?;
    let dots = x.dot(&y.t());
    let mut values = Array2::zeros(dots.dim());
    for ((i, j), v) in values.indexed_iter_mut() {
        let c = dots[[i, j]] / (nx[i] * ny[j]);
        *v = (1.0 - c).clamp(0.0, 2.0);
    }
    CostMatrix::new(values, CostMetric::Cosine)
}

pub fn cost_sqeuclidean(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<CostMatrix> {
    check_dims(&x, &y)?;
    let mut values = Array2::zeros((x.nrows(), y.nrows()));
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (j, yj) in y.rows().into_iter().enumerate() {
            values[[i, j]] = xi.iter().zip(yj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    CostMatrix::new(values, CostMetric::SquaredEuclidean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_cases() {
        let x = array![[1.0, 0.0]];
        let y = array![[1.0, 0.0], [0.0, 3.0], [-2.0, 0.0]];
        let c = cost_cosine(x.view(), y.view()).unwrap();
        assert_eq!(c.values(), &array![[0.0, 1.0, 2.0]]);
        assert!(cost_cosine(array![[0.0, 0.0]].view(), y.view()).is_err());
        assert!(cost_cosine(array![[1.0, 0.0, 0.0]].view(), y.view()).is_err());
    }

    #[test]
    fn sqeuclidean_cases() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        let y = array![[3.0, 4.0], [0.0, 0.0], [1.0, 1.0]];
        let c = cost_sqeuclidean(x.view(), y.view()).unwrap();
        assert_eq!(c.values()[[0, 0]], 25.0);
        assert_eq!(c.values()[[0, 1]], 0.0);
        assert_eq!(c.values()[[1, 2]], 0.0);
        let ct = cost_sqeuclidean(y.view(), x.view()).unwrap();
        assert_eq!(ct.values(), &c.values().t().to_owned());
    }

    #[test]
    fn rejects_negative() {
        assert!(CostMatrix::from_array(array![[-1.0]]).is_err());
        assert!(CostMatrix::new(array![[2.5]], CostMetric::Cosine).is_err());
    }
}
