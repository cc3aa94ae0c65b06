//! Lightweight-training adaptation.
//!
//! A binary linear classifier trained by full-batch Adam on the prototypes,
//! the few-shot support features and, every iteration, one geodesic-mixup
//! batch per class.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::feature_store::table::{fmt_f64, parse_header};
use crate::feature_store::{FeatureSet, Label};
use crate::linalg::{self, sigmoid, softplus};
use crate::mixup::{beta_sample, perturb, sample_mixup_batch, BarycenterConfig};
use crate::optim::{Adam, AdamConfig};
use crate::proto::PrototypeBank;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl LinearClassifier {
    /// Weights from `N(0, 1/D)`, bias 0.
    pub fn random(dimension: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "light-init");
        let sd = 1.0 / (dimension as f64).sqrt();
        LinearClassifier {
            weights: Array1::from_shape_fn(dimension, |_| sd * rng::gaussian(&mut r)),
            bias: 0.0,
        }
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    pub fn scores(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.bias
    }
}

impl Scorer for LinearClassifier {
    fn score(&self, z: &[f64]) -> Result<f64> {
        predict_linear(self, z).map(|(_, s)| s)
    }
}

/// `score = w·z + b`; bona fide only for strictly positive scores.
pub fn predict_linear(clf: &LinearClassifier, z: &[f64]) -> Result<(Label, f64)> {
    if z.len() != clf.dimension() {
        return Err(Error::DimensionMismatch {
            expected: clf.dimension(),
            actual: z.len(),
        });
    }
    let s = linalg::dot(clf.weights.as_slice().expect("contiguous"), z) + clf.bias;
    Ok((if s > 0.0 { Label::BonaFide } else { Label::Spoof }, s))
}

/// Mean binary cross-entropy with bona fide as the positive class.
pub fn cross_entropy(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let targets: Vec<f64> = labels.iter().map(|&l| target_of(l)).collect();
    soft_cross_entropy(scores, &targets)
}

/// Cross-entropy against soft targets `t = P(bona fide)`.
pub fn soft_cross_entropy(scores: &[f64], targets: &[f64]) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: targets.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Insufficient("cross-entropy of an empty batch".into()));
    }
    let sum: f64 = scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| t * softplus(-s) + (1.0 - t) * softplus(s))
        .sum();
    Ok(sum / scores.len() as f64)
}

fn target_of(label: Label) -> f64 {
    match label {
        Label::BonaFide => 1.0,
        Label::Spoof => 0.0,
    }
}

/// Loss and gradients `(dw, db)` of the mean soft cross-entropy of a linear
/// model.
pub fn linear_loss_grad(clf: &LinearClassifier, x: ArrayView2<f64>, targets: &[f64]) -> Result<(f64, Array1<f64>, f64)> {
    let s = clf.scores(x);
    let loss = soft_cross_entropy(s.as_slice().expect("contiguous"), targets)?;
    let n = targets.len() as f64;
    let resid = Array1::from_iter(s.iter().zip(targets).map(|(&s, &t)| (sigmoid(s) - t) / n));
    Ok((loss, x.t().dot(&resid), resid.sum()))
}

/// What is added to the base training set every iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    /// One geodesic-mixup batch per class.
    #[default]
    Geodesic,
    /// Nothing: a plain linear probe.
    None,
    /// `2Q` instance-wise mixes of random pairs with mixed soft labels.
    InstanceMix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LightTrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub barycenter: BarycenterConfig,
    pub augmentation: Augmentation,
    /// Re-perturb the support features every iteration with `barycenter.sigma`.
    pub perturb_support: bool,
    pub seed: u64,
}

impl Default for LightTrainConfig {
    fn default() -> Self {
        LightTrainConfig {
            iterations: 100,
            lr: 0.01,
            adam: AdamConfig::default(),
            barycenter: BarycenterConfig::default(),
            augmentation: Augmentation::Geodesic,
            perturb_support: true,
            seed: 0,
        }
    }
}

impl LightTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.barycenter.validate()
    }

    /// Prototypes and support only, no noise.
    pub fn linear_probe(&self) -> Self {
        LightTrainConfig {
            augmentation: Augmentation::None,
            perturb_support: false,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct LightOutcome {
    pub classifier: LinearClassifier,
    /// Training loss before each step.
    pub loss_history: Vec<f64>,
}

impl LightOutcome {
    /// `iteration,loss`
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            let _ = writeln!(out, "{i},{l}");
        }
        out
    }
}

/// Trains the adapted linear classifier.
pub fn train_light(bank: &PrototypeBank, support: &FeatureSet, config: &LightTrainConfig) -> Result<LightOutcome> {
    config.validate()?;
    if support.dimension() != bank.dimension() {
        return Err(Error::DimensionMismatch {
            expected: bank.dimension(),
            actual: support.dimension(),
        });
    }
    for label in Label::BOTH {
        if support.count(label) == 0 {
            return Err(Error::WrongClassCount(format!(
                "support has no {label} records; use one-class training-free adaptation instead"
            )));
        }
    }
    let d = bank.dimension();
    let mut base_rows: Vec<Array2<f64>> = Vec::new();
    let mut base_targets: Vec<f64> = Vec::new();
    for label in Label::BOTH {
        base_rows.push(bank.centroids(label).to_owned());
        base_targets.extend(std::iter::repeat_n(target_of(label), bank.k()));
    }
    let proto_rows = ndarray::concatenate(Axis(0), &[base_rows[0].view(), base_rows[1].view()]).expect("same width");
    let support_x = support.matrix();
    let support_t: Vec<f64> = support.iter().map(|r| target_of(r.label)).collect();

    let mut clf = LinearClassifier::random(d, config.seed);
    let mut adam = Adam::new(d + 1, config.lr, config.adam);
    let mut aug_rng = rng::stream(config.seed, "light-augment");
    let mut params = vec![0.0; d + 1];
    let mut grads = vec![0.0; d + 1];
    let mut history = Vec::with_capacity(config.iterations);
    let q = config.barycenter.q.unwrap_or(bank.k());

    for iteration in 0..config.iterations {
        let sup = if config.perturb_support {
            perturb(support_x.view(), config.barycenter.sigma, &mut aug_rng)
        } else {
            support_x.clone()
        };
        let mut blocks = vec![proto_rows.clone(), sup];
        let mut targets = base_targets.clone();
        targets.extend_from_slice(&support_t);
        match config.augmentation {
            Augmentation::None => {}
            Augmentation::Geodesic => {
                for label in Label::BOTH {
                    let mut batch = sample_mixup_batch(bank, support, label, &config.barycenter, &mut aug_rng)?;
                    batch.iteration = iteration;
                    targets.extend(std::iter::repeat_n(target_of(label), batch.points.nrows()));
                    blocks.push(batch.points);
                }
            }
            Augmentation::InstanceMix => {
                let pool = ndarray::concatenate(Axis(0), &[blocks[0].view(), blocks[1].view()]).expect("same width");
                let pool_t = targets.clone();
                let mut mixed = Array2::zeros((2 * q, d));
                for mut row in mixed.rows_mut() {
                    let i = aug_rng.random_range(0..pool.nrows());
                    let j = aug_rng.random_range(0..pool.nrows());
                    let lam = beta_sample(config.barycenter.beta_a, config.barycenter.beta_b, &mut aug_rng)?;
                    row.assign(&(&pool.row(i) * lam + &pool.row(j) * (1.0 - lam)));
                    targets.push(lam * pool_t[i] + (1.0 - lam) * pool_t[j]);
                }
                blocks.push(mixed);
            }
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let x = ndarray::concatenate(Axis(0), &views).expect("same width");
        let (loss, dw, db) = linear_loss_grad(&clf, x.view(), &targets)?;
        history.push(loss);
        params[..d].copy_from_slice(clf.weights.as_slice().expect("contiguous"));
        params[d] = clf.bias;
        grads[..d].copy_from_slice(dw.as_slice().expect("contiguous"));
        grads[d] = db;
        adam.step(&mut params, &grads);
        clf.weights.as_slice_mut().expect("contiguous").copy_from_slice(&params[..d]);
        clf.bias = params[d];
        if !loss.is_finite() {
            return Err(Error::Degenerate(format!("non-finite loss at iteration {iteration}")));
        }
    }
    Ok(LightOutcome {
        classifier: clf,
        loss_history: history,
    })
}

const TAG: &str = "#linclf";

/// `#linclf v1 D=<int>`, then `b,<bias>` and `w,<w0>,...`.
pub fn write_linear_classifier(clf: &LinearClassifier) -> String {
    let mut out = format!("{TAG} v1 D={}\nb,{}\nw", clf.dimension(), fmt_f64(clf.bias));
    for v in &clf.weights {
        let _ = write!(out, ",{}", fmt_f64(*v));
    }
    out.push('\n');
    out
}

pub fn save_linear_classifier(clf: &LinearClassifier, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_linear_classifier(clf)).map_err(|e| Error::io(path, e))
}

pub fn load_linear_classifier(path: impl AsRef<Path>) -> Result<LinearClassifier> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_linear_classifier(&text, path)
}

pub fn parse_linear_classifier(text: &str, path: &Path) -> Result<LinearClassifier> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let fields = parse_header(header, TAG, &["D"]).map_err(|m| err(1, m))?;
    let dim: usize = fields[0]
        .1
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| err(1, "invalid D".into()))?;
    let (mut bias, mut weights) = (None, None);
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums = cols[1..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| err(i + 1, format!("non-numeric value `{v}`"))))
            .collect::<Result<Vec<f64>>>()?;
        match (cols[0], nums.len()) {
            ("b", 1) if bias.is_none() => bias = Some(nums[0]),
            ("w", n) if n == dim && weights.is_none() => weights = Some(Array1::from(nums)),
            _ => return Err(err(i + 1, format!("unexpected row `{}` with {} values", cols[0], nums.len()))),
        }
    }
    match (bias, weights) {
        (Some(bias), Some(weights)) if bias.is_finite() && weights.iter().all(|v| v.is_finite()) => {
            Ok(LinearClassifier { weights, bias })
        }
        _ => Err(err(1, "classifier needs one finite `b` row and one `w` row".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::FeatureRecord;
    use ndarray::array;

    #[test]
    fn predict_cases() {
        let zero = LinearClassifier { weights: Array1::zeros(3), bias: 0.0 };
        assert_eq!(predict_linear(&zero, &[1.0, 0.0, 0.0]).unwrap(), (Label::Spoof, 0.0));
        let clf = LinearClassifier { weights: array![0.6, 0.8, 0.0], bias: 0.1 };
        let z = [0.6, 0.8, 0.0];
        assert_eq!(predict_linear(&clf, &z).unwrap().0, Label::BonaFide);
        let neg = LinearClassifier { weights: -&clf.weights, bias: -clf.bias };
        let (a, b) = (predict_linear(&clf, &z).unwrap().1, predict_linear(&neg, &z).unwrap().1);
        assert_eq!(a, -b);
        assert!(predict_linear(&clf, &[1.0]).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let ln2 = 2f64.ln();
        assert!((cross_entropy(&[0.0], &[Label::BonaFide]).unwrap() - ln2).abs() < 1e-15);
        assert!((cross_entropy(&[0.0], &[Label::Spoof]).unwrap() - ln2).abs() < 1e-15);
        let l = cross_entropy(&[20.0], &[Label::BonaFide]).unwrap();
        assert!((l - (-20f64).exp().ln_1p()).abs() < 1e-22);
        assert!((l - 2.06e-9).abs() < 1e-11);
        let s = [1.3, -0.4, 2.2];
        let y = [Label::BonaFide, Label::Spoof, Label::Spoof];
        let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
        let fy: Vec<Label> = y.iter().map(|l| l.other()).collect();
        assert!((cross_entropy(&s, &y).unwrap() - cross_entropy(&flipped, &fy).unwrap()).abs() < 1e-15);
        assert!(cross_entropy(&[], &[]).is_err());
        assert!((soft_cross_entropy(&[0.0], &[0.5]).unwrap() - ln2).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_fd() {
        let mut r = rng::seeded(4);
        let x = Array2::from_shape_fn((7, 4), |_| rng::gaussian(&mut r));
        let t: Vec<f64> = (0..7).map(|i| [0.0, 1.0, 0.3][i % 3]).collect();
        let clf = LinearClassifier::random(4, 1);
        let (_, dw, db) = linear_loss_grad(&clf, x.view(), &t).unwrap();
        let h = 1e-5;
        let loss = |c: &LinearClassifier| linear_loss_grad(c, x.view(), &t).unwrap().0;
        for k in 0..4 {
            let (mut up, mut dn) = (clf.clone(), clf.clone());
            up.weights[k] += h;
            dn.weights[k] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - dw[k]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
        let (mut up, mut dn) = (clf.clone(), clf.clone());
        up.bias += h;
        dn.bias -= h;
        let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
        assert!((fd - db).abs() <= 1e-4 * fd.abs().max(1e-3));
    }

    fn separable() -> (PrototypeBank, FeatureSet) {
        let bank = PrototypeBank::new(
            array![[1.0, 0.0, 0.0, 0.0], [0.8, 0.6, 0.0, 0.0]],
            array![[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.8, 0.6]],
            30.0,
            0.5,
        )
        .unwrap();
        let mut recs = Vec::new();
        for i in 0..5 {
            let t = i as f64 * 0.1;
            let bf = linalg::normalized(&[1.0, t, 0.0, 0.1]).unwrap();
            let sp = linalg::normalized(&[0.0, 0.1, 1.0, t]).unwrap();
            recs.push(FeatureRecord::new(format!("b{i}"), "t", Label::BonaFide, "", bf).unwrap());
            recs.push(FeatureRecord::new(format!("s{i}"), "t", Label::Spoof, "print", sp).unwrap());
        }
        (bank, FeatureSet::new(4, recs).unwrap())
    }

    #[test]
    fn separable_instance_is_learned() {
        let (bank, support) = separable();
        let cfg = LightTrainConfig { iterations: 100, lr: 0.1, ..Default::default() };
        let out = train_light(&bank, &support, &cfg).unwrap();
        for r in &support {
            assert_eq!(predict_linear(&out.classifier, &r.vector).unwrap().0, r.label);
        }
        for label in Label::BOTH {
            for c in bank.centroids(label).rows() {
                assert_eq!(predict_linear(&out.classifier, c.as_slice().unwrap()).unwrap().0, label);
            }
        }
        assert!(out.loss_history.last().unwrap() < &out.loss_history[0]);
    }

    #[test]
    fn zero_iterations_returns_init_and_is_reproducible() {
        let (bank, support) = separable();
        let cfg = LightTrainConfig { iterations: 0, seed: 3, ..Default::default() };
        let out = train_light(&bank, &support, &cfg).unwrap();
        assert_eq!(out.classifier, LinearClassifier::random(4, 3));
        let cfg = LightTrainConfig { iterations: 5, seed: 3, ..Default::default() };
        let a = train_light(&bank, &support, &cfg).unwrap();
        let b = train_light(&bank, &support, &cfg).unwrap();
        assert_eq!(a.classifier, b.classifier);
        assert_eq!(a.loss_history, b.loss_history);
        assert!(train_light(&bank, &support.of_class(Label::Spoof), &cfg).is_err());
    }

    #[test]
    fn file_round_trip() {
        let clf = LinearClassifier { weights: array![0.25, -1.0 / 3.0, 7e-12], bias: -0.125 };
        let text = write_linear_classifier(&clf);
        assert!(text.starts_with("#linclf v1 D=3\nb,"));
        assert_eq!(parse_linear_classifier(&text, Path::new("c")).unwrap(), clf);
        assert!(parse_linear_classifier("#linclf v1 D=2\nb,0\nw,1\n", Path::new("c")).is_err());
    }
}
