use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{coarse_groups, fine_groups, multiview, orth_loss_grad, proto_loss_grad, supcon};
use super::{FineGrouping, LossBreakdown, PrototypeBank};
use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Label};
use crate::linalg;
use crate::optim::{Adam, AdamConfig};
use crate::rng;

/// Upper clamp on the learnable margin, radians.
pub const MAX_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub tau: f64,
    pub scale: f64,
    pub init_margin: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Noise scale of the second contrastive view.
    pub view_sigma: f64,
    pub fine_grouping: FineGrouping,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 50,
            alpha: 0.01,
            beta: 0.01,
            eta: 1.0,
            tau: 0.07,
            scale: 30.0,
            init_margin: 0.5,
            lr: 1e-2,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            view_sigma: 0.05,
            fine_grouping: FineGrouping::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        nonneg(self.alpha, "alpha")?;
        nonneg(self.beta, "beta")?;
        nonneg(self.eta, "eta")?;
        nonneg(self.view_sigma, "view_sigma")?;
        for (v, name) in [(self.tau, "tau"), (self.scale, "scale"), (self.lr, "lr")] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=MAX_MARGIN).contains(&self.init_margin) {
            return Err(Error::Config(format!(
                "initial margin must lie in [0, {MAX_MARGIN}], got {}",
                self.init_margin
            )));
        }
        if self.k == 0 || self.batch_size == 0 {
            return Err(Error::Config("k and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Batch means of each term, measured before that batch's step.
    pub losses: LossBreakdown,
    /// Margin at the end of the epoch.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bank: PrototypeBank,
    pub history: Vec<EpochLog>,
}

impl TrainOutcome {
    /// `epoch,proto,orth,con_coarse,con_fine,total,margin`
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,proto,orth,con_coarse,con_fine,total,margin\n");
        for e in &self.history {
            let l = &e.losses;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch, l.proto, l.orth, l.con_coarse, l.con_fine, l.total, e.margin
            ));
        }
        out
    }
}

/// Per class, `K` training features drawn without replacement. A class with
/// fewer than `K` features is topped up with jittered copies.
fn init_centroids(pool: &FeatureSet, k: usize, seed: u64) -> [Array2<f64>; 2] {
    let mut rng = rng::stream(seed, "proto-init");
    Label::BOTH.map(|label| {
        let m = pool.class_matrix(label);
        let n = m.nrows();
        let mut rows: Vec<usize> = if n >= k {
            rand::seq::index::sample(&mut rng, n, k).into_vec()
        } else {
            (0..n).collect()
        };
        while rows.len() < k {
            rows.push(rng_index(&mut rng, n));
        }
        let mut c = m.select(Axis(0), &rows);
        for mut row in c.rows_mut().into_iter().skip(n) {
            row.mapv_inplace(|v| v + 0.05 * rng::gaussian(&mut rng));
        }
        linalg::normalize_rows(&mut c);
        c
    })
}

fn rng_index(rng: &mut rng::StreamRng, n: usize) -> usize {
    use rand::Rng;
    rng.random_range(0..n)
}

/// Learns prototypes and the margin by Adam on the combined objective.
///
/// Features are frozen, so the contrastive terms are constant in the
/// parameters: they are evaluated for the log but contribute no gradient.
pub fn train_prototypes(sources: &[FeatureSet], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if sources.is_empty() {
        return Err(Error::Insufficient("no source domains".into()));
    }
    let pool = FeatureSet::concat(sources)?;
    for label in Label::BOTH {
        if pool.count(label) == 0 {
            return Err(Error::WrongClassCount(format!("training data has no {label} records")));
        }
    }
    let z = pool.matrix();
    let labels: Vec<Label> = pool.iter().map(|r| r.label).collect();
    let coarse = coarse_groups(&pool);
    let fine = fine_groups(&pool, config.fine_grouping);

    let mut centroids = init_centroids(&pool, config.k, config.seed);
    let mut margin = config.init_margin;
    let kd = centroids[0].len();
    let mut params = vec![0.0; 2 * kd + 1];
    let mut grads = vec![0.0; 2 * kd + 1];
    let mut adam = Adam::new(params.len(), config.lr, config.adam);
    let mut batch_rng = rng::stream(config.seed, "proto-batches");
    let mut view_rng = rng::stream(config.seed, "proto-views");
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut batch_rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let zb = z.select(Axis(0), chunk);
            let lb: Vec<Label> = chunk.iter().map(|&i| labels[i]).collect();
            let (proto, gp, gm) = proto_loss_grad(&centroids, config.scale, margin, zb.view(), &lb);
            let (orth, go) = orth_loss_grad(&centroids);
            let (con_c, con_f) = if chunk.len() >= 2 {
                let views = multiview(zb.view(), config.view_sigma, &mut view_rng);
                let pick = |g: &[usize]| -> Vec<usize> {
                    chunk.iter().chain(chunk).map(|&i| g[i]).collect()
                };
                (
                    supcon(views.view(), &pick(&coarse), config.tau)?.loss,
                    supcon(views.view(), &pick(&fine), config.tau)?.loss,
                )
            } else {
                (0.0, 0.0)
            };
            for (x, v) in sums.iter_mut().zip([proto, orth, con_c, con_f]) {
                *x += v;
            }
            batches += 1;

            for c in 0..2 {
                let off = c * kd;
                for (j, (p, (a, b))) in centroids[c]
                    .iter()
                    .zip(gp[c].iter().zip(go[c].iter()))
                    .enumerate()
                {
                    params[off + j] = *p;
                    grads[off + j] = a + config.eta * b;
                }
            }
            params[2 * kd] = margin;
            grads[2 * kd] = gm;
            adam.step(&mut params, &grads);
            for c in 0..2 {
                let off = c * kd;
                for (j, p) in centroids[c].iter_mut().enumerate() {
                    *p = params[off + j];
                }
                linalg::normalize_rows(&mut centroids[c]);
            }
            margin = params[2 * kd].clamp(0.0, MAX_MARGIN);
        }
        let b = batches.max(1) as f64;
        let losses = LossBreakdown::combine(sums[0] / b, sums[1] / b, sums[2] / b, sums[3] / b, config);
        if !losses.total.is_finite() {
            return Err(Error::Degenerate(format!("non-finite loss at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: total {:.6} proto {:.6} margin {margin:.4}", losses.total, losses.proto);
        history.push(EpochLog { epoch, losses, margin });
    }

    let [bf, sp] = centroids;
    let bank = PrototypeBank::new(bf, sp, config.scale, margin)?;
    Ok(TrainOutcome { bank, history })
}
