//! Training-free adaptation.
//!
//! Each class's sub-centroids are transported onto that class's few-shot
//! support features and replaced by their barycentric images, then
//! re-normalized. No parameters are learned.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Label};
use crate::linalg;
use crate::ot::{cost_cosine, laplacian_reg_ot, uniform_weights, OTConfig, TransportPlan};
use crate::proto::PrototypeBank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Transported,
    Unchanged,
}

/// Per-class record of what adaptation did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassTransport {
    pub label: Label,
    pub provenance: Provenance,
    /// Final regularized objective; `None` when the class was not transported.
    pub objective: Option<f64>,
    pub marginal_violation: Option<f64>,
    pub converged: Option<bool>,
    /// Mean angle between each centroid and its replacement, radians.
    pub mean_angular_displacement: f64,
    /// Centroids left in place because their plan row carried no mass.
    pub degenerate_rows: Vec<usize>,
    /// Final coupling, centroids by support rows.
    #[serde(skip)]
    pub plan: Option<TransportPlan>,
}

impl ClassTransport {
    fn unchanged(label: Label) -> Self {
        ClassTransport {
            label,
            provenance: Provenance::Unchanged,
            objective: None,
            marginal_violation: None,
            converged: None,
            mean_angular_displacement: 0.0,
            degenerate_rows: Vec::new(),
            plan: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptedBank {
    pub bank: PrototypeBank,
    /// Indexed by [`Label::index`].
    pub classes: [ClassTransport; 2],
}

impl AdaptedBank {
    pub fn class(&self, label: Label) -> &ClassTransport {
        &self.classes[label.index()]
    }

    /// JSON sidecar with the per-class diagnostics.
    pub fn diagnostics_json(&self) -> String {
        serde_json::to_string_pretty(&self.classes).expect("diagnostics serialize")
    }
}

struct Relocated {
    centroids: Array2<f64>,
    diag: ClassTransport,
}

/// Transports `centroids` onto `support` and returns the re-normalized
/// barycentric images.
fn relocate(label: Label, centroids: ArrayView2<f64>, support: ArrayView2<f64>, config: &OTConfig) -> Result<Relocated> {
    let (k, m) = (centroids.nrows(), support.nrows());
    let cost = cost_cosine(centroids, support)?;
    let a = uniform_weights(k).to_vec();
    let b = uniform_weights(m).to_vec();
    let sol = laplacian_reg_ot(&cost, &a, &b, centroids, support, config)?;
    let gamma = sol.plan.gamma();
    let mut out = centroids.to_owned();
    let mut degenerate = Vec::new();
    for i in 0..k {
        let mass: f64 = gamma.row(i).sum();
        let image = gamma.row(i).dot(&support) / mass;
        match linalg::normalized(image.as_slice().expect("contiguous")) {
            Some(v) if mass > 0.0 && v.iter().all(|x| x.is_finite()) => {
                out.row_mut(i).assign(&ndarray::ArrayView1::from(&v[..]));
            }
            _ => {
                log::warn!("{label} centroid {i} received no transport mass; left unchanged");
                degenerate.push(i);
            }
        }
    }
    let displacement = mean_angle(centroids, out.view());
    Ok(Relocated {
        centroids: out,
        diag: ClassTransport {
            label,
            provenance: Provenance::Transported,
            objective: sol.objective_trace.last().copied(),
            marginal_violation: Some(sol.plan.marginal_violation),
            converged: Some(sol.plan.converged),
            mean_angular_displacement: displacement,
            degenerate_rows: degenerate,
            plan: Some(sol.plan.clone()),
        },
    })
}

/// Mean angle between corresponding rows.
pub fn mean_angle(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let n = a.nrows().max(1) as f64;
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| linalg::angle_between(x, y))
        .sum::<f64>()
        / n
}

fn check_support(bank: &PrototypeBank, support: &FeatureSet) -> Result<()> {
    if support.dimension() != bank.dimension() {
        return Err(Error::DimensionMismatch {
            expected: bank.dimension(),
            actual: support.dimension(),
        });
    }
    Ok(())
}

/// Class-wise transport of both classes. The two solves run concurrently.
pub fn adapt_prototypes(bank: &PrototypeBank, support: &FeatureSet, config: &OTConfig) -> Result<AdaptedBank> {
    check_support(bank, support)?;
    for label in Label::BOTH {
        if support.count(label) == 0 {
            return Err(Error::WrongClassCount(format!(
                "support has no {label} records; use one-class adaptation instead"
            )));
        }
    }
    let run = |label: Label| {
        let s = support.class_matrix(label);
        relocate(label, bank.centroids(label), s.view(), config)
    };
    let (bf, sp) = rayon::join(|| run(Label::BonaFide), || run(Label::Spoof));
    let (bf, sp) = (bf?, sp?);
    Ok(AdaptedBank {
        bank: PrototypeBank::new(bf.centroids, sp.centroids, bank.scale, bank.margin)?,
        classes: [bf.diag, sp.diag],
    })
}

/// Transports only the class present in `support`; the other class is kept
/// bit-for-bit.
pub fn adapt_one_class(bank: &PrototypeBank, support: &FeatureSet, config: &OTConfig) -> Result<AdaptedBank> {
    check_support(bank, support)?;
    let present = support.labels_present();
    let label = match present.as_slice() {
        [one] => *one,
        [] => return Err(Error::Insufficient("support set is empty".into())),
        _ => {
            return Err(Error::WrongClassCount(
                "support has both classes; use two-class adaptation instead".into(),
            ))
        }
    };
    let s = support.class_matrix(label);
    let moved = relocate(label, bank.centroids(label), s.view(), config)?;
    let mut classes = [ClassTransport::unchanged(Label::BonaFide), ClassTransport::unchanged(Label::Spoof)];
    classes[label.index()] = moved.diag;
    Ok(AdaptedBank {
        bank: bank.with_class(label, moved.centroids)?,
        classes,
    })
}
