//! Multi-centroid prototype classifier.
//!
//! Each class owns `K` unit sub-centroids. A feature is scored by its mean
//! cosine similarity to each class's sub-centroids; the class with the higher
//! mean wins.

mod io;
mod loss;
mod train;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::feature_store::Label;
use crate::linalg;

pub use io::{load_prototype_bank, parse_prototype_bank, save_prototype_bank, write_prototype_bank};
pub use loss::{
    coarse_groups, fine_groups, loss_orth, loss_proto, loss_supcon, multiview, orth_loss_grad, proto_loss_grad, supcon,
    total_loss, FineGrouping, LossBreakdown, SupConOutput,
};
pub use train::{train_prototypes, EpochLog, TrainConfig, TrainOutcome};

/// Norm tolerance for centroids at rest.
pub const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    /// `[bona fide, spoof]`, each `K x D` with one centroid per row.
    centroids: [Array2<f64>; 2],
    pub scale: f64,
    /// Additive angular margin, radians.
    pub margin: f64,
}

impl PrototypeBank {
    pub fn new(bona_fide: Array2<f64>, spoof: Array2<f64>, scale: f64, margin: f64) -> Result<Self> {
        if bona_fide.dim() != spoof.dim() {
            return Err(Error::DimensionMismatch {
                expected: bona_fide.len(),
                actual: spoof.len(),
            });
        }
        if bona_fide.nrows() == 0 || bona_fide.ncols() == 0 {
            return Err(Error::Config("a prototype bank needs K >= 1 and D >= 1".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {scale}")));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
            return Err(Error::Config(format!("margin must lie in [0, pi/2), got {margin}")));
        }
        for m in [&bona_fide, &spoof] {
            for row in m.rows() {
                let n = row.dot(&row).sqrt();
                if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
                    return Err(Error::Degenerate(format!("centroid norm {n} is not 1")));
                }
            }
        }
        Ok(PrototypeBank {
            centroids: [bona_fide, spoof],
            scale,
            margin,
        })
    }

    /// Like [`PrototypeBank::new`] but unit-normalizes the centroids first.
    pub fn from_unnormalized(
        mut bona_fide: Array2<f64>,
        mut spoof: Array2<f64>,
        scale: f64,
        margin: f64,
    ) -> Result<Self> {
        for m in [&mut bona_fide, &mut spoof] {
            if m.rows().into_iter().any(|r| r.dot(&r) == 0.0) {
                return Err(Error::Degenerate("zero centroid".into()));
            }
            linalg::normalize_rows(m);
        }
        PrototypeBank::new(bona_fide, spoof, scale, margin)
    }

    pub fn dimension(&self) -> usize {
        self.centroids[0].ncols()
    }

    /// Sub-centroids per class.
    pub fn k(&self) -> usize {
        self.centroids[0].nrows()
    }

    pub fn centroids(&self, label: Label) -> ArrayView2<'_, f64> {
        self.centroids[label.index()].view()
    }

    pub(crate) fn centroid_arrays(&self) -> &[Array2<f64>; 2] {
        &self.centroids
    }

    /// Replaces one class's centroids, keeping everything else.
    pub fn with_class(&self, label: Label, centroids: Array2<f64>) -> Result<Self> {
        let mut parts = self.centroids.clone();
        parts[label.index()] = centroids;
        let [bf, sp] = parts;
        PrototypeBank::new(bf, sp, self.scale, self.margin)
    }

    /// Swaps the class roles (bona fide centroids become spoof and back).
    pub fn swapped(&self) -> Self {
        PrototypeBank {
            centroids: [self.centroids[1].clone(), self.centroids[0].clone()],
            ..*self
        }
    }

    /// Mean of one class's centroids (not normalized).
    pub fn class_mean(&self, label: Label) -> Array1<f64> {
        self.centroids[label.index()]
            .mean_axis(ndarray::Axis(0))
            .expect("K >= 1")
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                actual: z.len(),
            });
        }
        Ok(())
    }
}

/// `(1/K) Σ_k cos(z, p_k)` over one class.
pub fn mean_cosine(z: &[f64], bank: &PrototypeBank, label: Label) -> Result<f64> {
    bank.check_dim(z)?;
    let zn = linalg::norm(z);
    if zn == 0.0 {
        return Err(Error::Degenerate("zero query vector".into()));
    }
    let c = bank.centroids(label);
    let sum: f64 = c
        .rows()
        .into_iter()
        .map(|p| {
            let p = p.as_slice().expect("standard layout");
            linalg::dot(z, p) / (zn * linalg::norm(p))
        })
        .sum();
    Ok(sum / c.nrows() as f64)
}

/// Returns the winning class and `score = mean_cos(bona fide) - mean_cos(spoof)`.
///
/// Scores within `1e-12` of zero resolve to spoof.
pub fn classify(z: &[f64], bank: &PrototypeBank) -> Result<(Label, f64)> {
    let bf = mean_cosine(z, bank, Label::BonaFide)?;
    let sp = mean_cosine(z, bank, Label::Spoof)?;
    let score = bf - sp;
    let label = if score >= 1e-12 { Label::BonaFide } else { Label::Spoof };
    Ok((label, score))
}
