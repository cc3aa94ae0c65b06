use ndarray::Array1;

use super::Scorer;
use crate::adapt_light::{train_light, Augmentation, LightOutcome, LightTrainConfig};
use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Label};
use crate::linalg;
use crate::proto::PrototypeBank;

/// Nearest class mean: unit-normalized support means, scored by the cosine
/// difference.
#[derive(Debug, Clone, PartialEq)]
pub struct NcmClassifier {
    pub bona_fide: Array1<f64>,
    pub spoof: Array1<f64>,
}

impl Scorer for NcmClassifier {
    fn score(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.bona_fide.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bona_fide.len(),
                actual: z.len(),
            });
        }
        let n = linalg::norm(z);
        if n == 0.0 {
            return Err(Error::Degenerate("zero query vector".into()));
        }
        let cos = |m: &Array1<f64>| linalg::dot(m.as_slice().expect("contiguous"), z) / n;
        Ok(cos(&self.bona_fide) - cos(&self.spoof))
    }
}

pub fn baseline_ncm(support: &FeatureSet) -> Result<NcmClassifier> {
    let mean = |label: Label| -> Result<Array1<f64>> {
        let m = support
            .class_matrix(label)
            .mean_axis(ndarray::Axis(0))
            .ok_or_else(|| Error::WrongClassCount(format!("support has no {label} records")))?;
        linalg::normalized(m.as_slice().expect("contiguous"))
            .map(Array1::from)
            .ok_or_else(|| Error::Degenerate(format!("{label} support mean is zero")))
    };
    Ok(NcmClassifier {
        bona_fide: mean(Label::BonaFide)?,
        spoof: mean(Label::Spoof)?,
    })
}

/// Linear probe on prototypes and support, no augmentation or noise.
pub fn baseline_linear_probe(bank: &PrototypeBank, support: &FeatureSet, config: &LightTrainConfig) -> Result<LightOutcome> {
    train_light(bank, support, &config.linear_probe())
}

/// Linear probe plus instance-wise mixup with Beta-mixed soft labels.
pub fn baseline_manifold_mixup(
    bank: &PrototypeBank,
    support: &FeatureSet,
    config: &LightTrainConfig,
) -> Result<LightOutcome> {
    let cfg = LightTrainConfig {
        augmentation: Augmentation::InstanceMix,
        ..config.linear_probe()
    };
    train_light(bank, support, &cfg)
}
