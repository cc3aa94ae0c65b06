//! Biometric metrics and the few-shot baselines.
//!
//! Bona fide is the positive class: a score at or above the threshold is
//! accepted as bona fide, and an accepted spoof is a false positive.

mod baselines;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Label};

pub use baselines::{baseline_linear_probe, baseline_manifold_mixup, baseline_ncm, NcmClassifier};

/// Anything that maps a feature to a real score, higher meaning bona fide.
pub trait Scorer {
    fn score(&self, z: &[f64]) -> Result<f64>;
}

impl Scorer for crate::proto::PrototypeBank {
    fn score(&self, z: &[f64]) -> Result<f64> {
        crate::proto::classify(z, self).map(|(_, s)| s)
    }
}

/// Scores every record of `set`.
pub fn score_set<S: Scorer + ?Sized>(scorer: &S, set: &FeatureSet) -> Result<ScoreSet> {
    let scores = set.iter().map(|r| scorer.score(&r.vector)).collect::<Result<Vec<_>>>()?;
    ScoreSet::new(scores, set.iter().map(|r| r.label).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<Label>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(Error::Insufficient("empty score set".into()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Degenerate(format!("score {i} is not finite")));
        }
        Ok(ScoreSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    fn class_counts(&self) -> Result<(u64, u64)> {
        let pos = self.count(Label::BonaFide) as u64;
        let neg = self.count(Label::Spoof) as u64;
        if pos == 0 || neg == 0 {
            return Err(Error::WrongClassCount("metrics need both classes".into()));
        }
        Ok((pos, neg))
    }

    /// Cumulative `(threshold, true positives, false positives)` per distinct
    /// score, descending.
    fn blocks(&self) -> Vec<(f64, u64, u64)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut out: Vec<(f64, u64, u64)> = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        for (n, &i) in idx.iter().enumerate() {
            match self.labels[i] {
                Label::BonaFide => tp += 1,
                Label::Spoof => fp += 1,
            }
            let last_of_block = idx.get(n + 1).is_none_or(|&j| self.scores[j] != self.scores[i]);
            if last_of_block {
                out.push((self.scores[i], tp, fp));
            }
        }
        out
    }

    /// The same scores with classes swapped.
    pub fn with_swapped_labels(&self) -> ScoreSet {
        ScoreSet {
            scores: self.scores.clone(),
            labels: self.labels.iter().map(|l| l.other()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Accept as bona fide when `score >= threshold`. The origin uses `+inf`.
    pub threshold: f64,
}

/// ROC curve from `(0, 0)` to `(1, 1)`, one point per distinct score.
pub fn roc_points(s: &ScoreSet) -> Result<Vec<RocPoint>> {
    let (pos, neg) = s.class_counts()?;
    let mut pts = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    pts.extend(s.blocks().into_iter().map(|(t, tp, fp)| RocPoint {
        fpr: fp as f64 / neg as f64,
        tpr: tp as f64 / pos as f64,
        threshold: t,
    }));
    Ok(pts)
}

/// Trapezoidal ROC area, accumulated in integer counts so that it equals the
/// Mann-Whitney statistic (ties count one half) exactly.
pub fn auc(s: &ScoreSet) -> Result<f64> {
    let (pos, neg) = s.class_counts()?;
    let (mut area2, mut prev_tp, mut prev_fp) = (0u128, 0u64, 0u64);
    for (_, tp, fp) in s.blocks() {
        area2 += ((fp - prev_fp) as u128) * ((tp + prev_tp) as u128);
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(area2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// HTER at the threshold minimizing `|FAR - FRR|` over the evaluation scores.
///
/// Candidate thresholds sit strictly between adjacent distinct scores, plus
/// one below the minimum and one above the maximum. Ties go to the lower
/// threshold. Returns `(hter, threshold)`.
pub fn hter_at_eer(s: &ScoreSet) -> Result<(f64, f64)> {
    let (pos, neg) = s.class_counts()?;
    let blocks = s.blocks();
    // candidate c accepts the first c blocks; c = 0 accepts nothing
    let threshold_for = |c: usize| -> f64 {
        match c {
            0 => blocks[0].0 + 1.0,
            c if c == blocks.len() => blocks[c - 1].0 - 1.0,
            c => 0.5 * (blocks[c - 1].0 + blocks[c].0),
        }
    };
    let counts = |c: usize| -> (u64, u64) {
        if c == 0 {
            (0, 0)
        } else {
            (blocks[c - 1].1, blocks[c - 1].2)
        }
    };
    let mut best: Option<(u128, usize)> = None;
    // ascending threshold order is descending c
    for c in (0..=blocks.len()).rev() {
        let (tp, fp) = counts(c);
        let fn_ = pos - tp;
        // |FAR - FRR| scaled by pos * neg
        let gap = ((fp as i128) * (pos as i128) - (fn_ as i128) * (neg as i128)).unsigned_abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, c));
        }
    }
    let (_, c) = best.expect("at least one candidate");
    let (tp, fp) = counts(c);
    let far = fp as f64 / neg as f64;
    let frr = (pos - tp) as f64 / pos as f64;
    Ok((0.5 * (far + frr), threshold_for(c)))
}

/// TPR at `target` FPR, interpolating linearly between the last ROC point
/// with `fpr <= target` and the next one.
pub fn tpr_at_fpr(s: &ScoreSet, target: f64) -> Result<f64> {
    Ok(tpr_on_curve(&roc_points(s)?, target))
}

pub fn tpr_on_curve(points: &[RocPoint], target: f64) -> f64 {
    let Some(k) = points.iter().rposition(|p| p.fpr <= target) else {
        return 0.0;
    };
    let here = points[k];
    match points.get(k + 1) {
        Some(next) if next.fpr > here.fpr => {
            here.tpr + (target - here.fpr) / (next.fpr - here.fpr) * (next.tpr - here.tpr)
        }
        _ => here.tpr,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub hter: f64,
    pub auc: f64,
    pub tpr_at_fpr1: f64,
    pub eer_threshold: f64,
    pub n_bona_fide: usize,
    pub n_spoof: usize,
}

impl MetricReport {
    pub fn compute(s: &ScoreSet) -> Result<Self> {
        let (hter, eer_threshold) = hter_at_eer(s)?;
        Ok(MetricReport {
            hter,
            auc: auc(s)?,
            tpr_at_fpr1: tpr_at_fpr(s, 0.01)?,
            eer_threshold,
            n_bona_fide: s.count(Label::BonaFide),
            n_spoof: s.count(Label::Spoof),
        })
    }
}

/// `fpr,tpr,threshold` rows.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    const B: Label = Label::BonaFide;
    const S: Label = Label::Spoof;

    fn set(scores: &[f64], labels: &[Label]) -> ScoreSet {
        ScoreSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    /// Pair counting: P(bona fide score > spoof score) + ½ P(tie).
    fn mann_whitney(s: &ScoreSet) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, lx) in s.scores().iter().zip(s.labels()) {
            for (y, ly) in s.scores().iter().zip(s.labels()) {
                if *lx == B && *ly == S {
                    den += 1.0;
                    num += if x > y {
                        1.0
                    } else if x == y {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn separated_and_tied() {
        let s = set(&[0.9, 0.1], &[B, S]);
        assert_eq!(auc(&s).unwrap(), 1.0);
        let pts = roc_points(&s).unwrap();
        assert!(pts.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(hter_at_eer(&s).unwrap().0, 0.0);
        assert_eq!(tpr_at_fpr(&s, 0.01).unwrap(), 1.0);

        let tied = set(&[0.3; 4], &[B, S, B, S]);
        let pts = roc_points(&tied).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!((pts[1].fpr, pts[1].tpr), (1.0, 1.0));
        assert_eq!(auc(&tied).unwrap(), 0.5);
    }

    #[test]
    fn inverted_labels() {
        let s = set(&[0.9, 0.7, 0.4, 0.2, 0.5], &[B, S, B, S, S]);
        let a = auc(&s).unwrap();
        assert!((auc(&s.with_swapped_labels()).unwrap() - (1.0 - a)).abs() < 1e-15);
        let all_spoof_above = set(&[0.1, 0.2, 0.8, 0.9], &[B, B, S, S]);
        assert_eq!(tpr_at_fpr(&all_spoof_above, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn hter_hand_example() {
        let s = set(&[0.8, 0.6, 0.4, 0.2], &[B, S, B, S]);
        let (h, t) = hter_at_eer(&s).unwrap();
        assert_eq!(h, 0.5);
        assert!((t - 0.5).abs() < 1e-15);
        let neg = ScoreSet::new(s.scores().iter().map(|x| -x).collect(), s.with_swapped_labels().labels().to_vec())
            .unwrap();
        assert_eq!(hter_at_eer(&neg).unwrap().0, h);
    }

    #[test]
    fn step_roc_interpolation() {
        let pts = [
            RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY },
            RocPoint { fpr: 0.0, tpr: 0.3, threshold: 0.9 },
            RocPoint { fpr: 0.02, tpr: 0.8, threshold: 0.5 },
            RocPoint { fpr: 1.0, tpr: 1.0, threshold: 0.1 },
        ];
        assert!((tpr_on_curve(&pts, 0.01) - 0.55).abs() < 1e-15);
    }

    #[test]
    fn random_scores_give_half() {
        let mut r = rng::seeded(17);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let labels: Vec<Label> = (0..n).map(|_| if r.random::<bool>() { B } else { S }).collect();
        let a = auc(&ScoreSet::new(scores, labels).unwrap()).unwrap();
        assert!((a - 0.5).abs() < 0.02, "{a}");
    }

    #[test]
    fn single_class_rejected() {
        let s = set(&[0.1, 0.2], &[B, B]);
        assert!(auc(&s).is_err());
        assert!(hter_at_eer(&s).is_err());
        assert!(ScoreSet::new(vec![], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn auc_is_mann_whitney(raw in prop::collection::vec((0u8..12, any::<bool>()), 2..100)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 7.0).collect();
            let labels: Vec<Label> = raw.iter().map(|(_, b)| if *b { B } else { S }).collect();
            prop_assume!(labels.contains(&B) && labels.contains(&S));
            let s = ScoreSet::new(scores, labels).unwrap();
            prop_assert!((auc(&s).unwrap() - mann_whitney(&s)).abs() < 1e-12);
        }

        #[test]
        fn monotone_invariance(raw in prop::collection::vec((-50i32..50, any::<bool>()), 2..60)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 10.0).collect();
            let labels: Vec<Label> = raw.iter().map(|(_, b)| if *b { B } else { S }).collect();
            prop_assume!(labels.contains(&B) && labels.contains(&S));
            let s = ScoreSet::new(scores.clone(), labels.clone()).unwrap();
            let t = ScoreSet::new(scores.iter().map(|x| (x * 0.7).exp() + 3.0).collect(), labels).unwrap();
            let (a, b) = (MetricReport::compute(&s).unwrap(), MetricReport::compute(&t).unwrap());
            prop_assert_eq!(a.auc, b.auc);
            prop_assert_eq!(a.hter, b.hter);
            prop_assert_eq!(a.tpr_at_fpr1, b.tpr_at_fpr1);
            prop_assert!(a.hter >= 0.0 && a.hter <= 1.0);
        }
    }
}
