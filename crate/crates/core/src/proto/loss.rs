//! Training losses.
//!
//! Gradients are taken with respect to the raw centroid rows, treating
//! `cos(z, p)` as `z · p`. The two agree at rest, where every centroid has
//! unit norm.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};

use super::{PrototypeBank, TrainConfig};
use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Label};
use crate::linalg::{self, log_sum_exp, sigmoid, softplus};
use crate::rng::{self, StreamRng};

/// Clamp applied to mean similarities before `arccos`.
pub const ACOS_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct LossBreakdown {
    pub proto: f64,
    pub orth: f64,
    pub con_coarse: f64,
    pub con_fine: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(proto: f64, orth: f64, con_coarse: f64, con_fine: f64, cfg: &TrainConfig) -> Self {
        LossBreakdown {
            proto,
            orth,
            con_coarse,
            con_fine,
            total: proto + cfg.alpha * con_coarse + cfg.beta * con_fine + cfg.eta * orth,
        }
    }
}

/// How fine-grained contrastive groups are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineGrouping {
    /// `(domain, attack or bona fide)` pairs.
    #[default]
    DomainAttack,
    /// Attack type only, pooled across domains.
    Attack,
}

pub fn coarse_groups(batch: &FeatureSet) -> Vec<usize> {
    batch.iter().map(|r| r.label.index()).collect()
}

/// Dense group ids, assigned in sorted key order.
pub fn fine_groups(batch: &FeatureSet, grouping: FineGrouping) -> Vec<usize> {
    let keys: Vec<(String, String)> = batch
        .iter()
        .map(|r| {
            let kind = match r.label {
                Label::BonaFide => Label::BonaFide.to_string(),
                Label::Spoof => r.attack.clone(),
            };
            match grouping {
                FineGrouping::DomainAttack => (r.domain.clone(), kind),
                FineGrouping::Attack => (String::new(), kind),
            }
        })
        .collect();
    let mut ids = BTreeMap::new();
    for k in &keys {
        ids.entry(k.clone()).or_insert(0usize);
    }
    for (i, v) in ids.values_mut().enumerate() {
        *v = i;
    }
    keys.iter().map(|k| ids[k]).collect()
}

fn check_batch(batch: &FeatureSet, bank: &PrototypeBank) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Insufficient("empty batch".into()));
    }
    if batch.dimension() != bank.dimension() {
        return Err(Error::DimensionMismatch {
            expected: bank.dimension(),
            actual: batch.dimension(),
        });
    }
    Ok(())
}

/// Mean additive-angular-margin loss over the batch.
pub fn loss_proto(batch: &FeatureSet, bank: &PrototypeBank) -> Result<f64> {
    check_batch(batch, bank)?;
    let z = batch.matrix();
    let labels: Vec<Label> = batch.iter().map(|r| r.label).collect();
    Ok(proto_loss_grad(bank.centroid_arrays(), bank.scale, bank.margin, z.view(), &labels).0)
}

/// Margin loss, its centroid gradients `[bona fide, spoof]` and its margin
/// gradient, at raw centroid rows (no re-normalization).
pub fn proto_loss_grad(
    centroids: &[Array2<f64>; 2],
    scale: f64,
    margin: f64,
    z: ArrayView2<f64>,
    labels: &[Label],
) -> (f64, [Array2<f64>; 2], f64) {
    let k = centroids[0].nrows() as f64;
    let means = [
        centroids[0].mean_axis(Axis(0)).expect("K >= 1"),
        centroids[1].mean_axis(Axis(0)).expect("K >= 1"),
    ];
    let sims = [z.dot(&means[0]), z.dot(&means[1])];
    let n = labels.len() as f64;
    let lo_b = -1.0 + ACOS_CLAMP;
    let hi_b = 1.0 - ACOS_CLAMP;

    let mut loss = 0.0;
    let mut dmean = [ndarray::Array1::zeros(z.ncols()), ndarray::Array1::zeros(z.ncols())];
    let mut dm = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let (yi, oi) = (y.index(), y.other().index());
        let raw_y = sims[yi][i];
        let raw_o = sims[oi][i];
        let s_y = raw_y.clamp(lo_b, hi_b);
        let s_o = raw_o.clamp(lo_b, hi_b);
        let theta = s_y.acos();
        let l_y = scale * (theta + margin).cos();
        let l_o = scale * s_o;
        loss += softplus(l_o - l_y);
        let q = sigmoid(l_o - l_y);
        let sin_tm = (theta + margin).sin();
        let zi = z.row(i);
        if raw_y == s_y {
            let dly_ds = scale * sin_tm / (1.0 - s_y * s_y).sqrt();
            dmean[yi].scaled_add(-q * dly_ds / n, &zi);
        }
        if raw_o == s_o {
            dmean[oi].scaled_add(q * scale / n, &zi);
        }
        dm += q * scale * sin_tm / n;
    }
    let grads = [0, 1].map(|c| {
        let row = &dmean[c] / k;
        let mut g = Array2::zeros(centroids[c].raw_dim());
        for mut r in g.rows_mut() {
            r.assign(&row);
        }
        g
    });
    (loss / n, grads, dm)
}

/// `Σ_class ‖P Pᵀ − I‖²_F` over the two classes.
pub fn loss_orth(bank: &PrototypeBank) -> f64 {
    orth_loss_grad(bank.centroid_arrays()).0
}

/// Orthogonality loss and its centroid gradients, `[bona fide, spoof]`.
pub fn orth_loss_grad(centroids: &[Array2<f64>; 2]) -> (f64, [Array2<f64>; 2]) {
    let mut total = 0.0;
    let grads = [0, 1].map(|c| {
        let p = &centroids[c];
        let mut g = p.dot(&p.t());
        g.diag_mut().mapv_inplace(|v| v - 1.0);
        total += g.iter().map(|v| v * v).sum::<f64>();
        g.dot(p) * 4.0
    });
    (total, grads)
}

#[derive(Debug, Clone)]
pub struct SupConOutput {
    pub loss: f64,
    /// Anchors without any positive partner; they contribute 0.
    pub no_positive: usize,
    /// Gradient with respect to the multiview feature rows.
    pub grad: Array2<f64>,
}

/// Supervised contrastive loss over already-built rows, averaged over all
/// anchors.
pub fn supcon(features: ArrayView2<f64>, groups: &[usize], tau: f64) -> Result<SupConOutput> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n = features.nrows();
    if groups.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: groups.len(),
        });
    }
    if n < 2 {
        return Err(Error::Insufficient("contrastive loss needs at least 2 rows".into()));
    }
    let sims = features.dot(&features.t()) / tau;
    let mut w = Array2::<f64>::zeros((n, n));
    let mut loss = 0.0;
    let mut no_positive = 0;
    let mut row_buf = Vec::with_capacity(n - 1);
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && groups[j] == groups[i]).collect();
        if positives.is_empty() {
            no_positive += 1;
            continue;
        }
        row_buf.clear();
        row_buf.extend((0..n).filter(|&j| j != i).map(|j| sims[[i, j]]));
        let lse = log_sum_exp(row_buf.iter().copied());
        let inv_p = 1.0 / positives.len() as f64;
        let pos_mean: f64 = positives.iter().map(|&p| sims[[i, p]]).sum::<f64>() * inv_p;
        loss += lse - pos_mean;
        for j in (0..n).filter(|&j| j != i) {
            w[[i, j]] += (sims[[i, j]] - lse).exp();
        }
        for &p in &positives {
            w[[i, p]] -= inv_p;
        }
    }
    let scale = 1.0 / (n as f64 * tau);
    let sym = &w + &w.t();
    let grad = sym.dot(&features) * scale;
    Ok(SupConOutput {
        loss: loss / n as f64,
        no_positive,
        grad,
    })
}

/// Stacks the batch over a second view: each row plus `N(0, σ²)` noise,
/// re-normalized. Rows `0..B` are the originals, `B..2B` the views.
pub fn multiview(z: ArrayView2<f64>, sigma: f64, rng: &mut StreamRng) -> Array2<f64> {
    let (b, d) = z.dim();
    let mut out = Array2::zeros((2 * b, d));
    out.slice_mut(ndarray::s![..b, ..]).assign(&z);
    for i in 0..b {
        let mut row: Vec<f64> = z.row(i).iter().map(|&v| v + sigma * rng::gaussian(rng)).collect();
        let n = linalg::norm(&row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
        out.row_mut(b + i).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    out
}

fn doubled(groups: &[usize]) -> Vec<usize> {
    groups.iter().chain(groups).copied().collect()
}

/// Supervised contrastive loss over the multiviewed batch.
pub fn loss_supcon(
    batch: &FeatureSet,
    groups: &[usize],
    tau: f64,
    view_sigma: f64,
    rng: &mut StreamRng,
) -> Result<SupConOutput> {
    if batch.len() < 2 {
        return Err(Error::Insufficient("contrastive loss needs a batch of at least 2".into()));
    }
    if groups.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            actual: groups.len(),
        });
    }
    let views = multiview(batch.matrix().view(), view_sigma, rng);
    supcon(views.view(), &doubled(groups), tau)
}

/// All four terms combined with the weights of `config`. Views are drawn from
/// a stream derived from `config.seed`.
pub fn total_loss(batch: &FeatureSet, bank: &PrototypeBank, config: &TrainConfig) -> Result<LossBreakdown> {
    let mut rng = rng::stream(config.seed, "total-loss-views");
    batch_breakdown(batch, bank, config, &mut rng)
}

pub(crate) fn batch_breakdown(
    batch: &FeatureSet,
    bank: &PrototypeBank,
    config: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<LossBreakdown> {
    config.validate()?;
    check_batch(batch, bank)?;
    let proto = loss_proto(batch, bank)?;
    let orth = loss_orth(bank);
    let (coarse, fine) = if batch.len() >= 2 {
        let views = multiview(batch.matrix().view(), config.view_sigma, rng);
        let c = supcon(views.view(), &doubled(&coarse_groups(batch)), config.tau)?;
        let f = supcon(views.view(), &doubled(&fine_groups(batch, config.fine_grouping)), config.tau)?;
        (c.loss, f.loss)
    } else {
        (0.0, 0.0)
    };
    Ok(LossBreakdown::combine(proto, orth, coarse, fine, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::FeatureRecord;
    use ndarray::array;
    use rand::Rng;

    fn rec(id: &str, domain: &str, label: Label, v: Vec<f64>) -> FeatureRecord {
        let attack = if label == Label::Spoof { "print" } else { "" };
        FeatureRecord::new(id, domain, label, attack, v).unwrap()
    }

    fn random_unit(rng: &mut StreamRng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng::gaussian(rng)).collect();
        linalg::normalized(&v).unwrap()
    }

    #[test]
    fn symmetric_logits_give_ln2() {
        let bank = PrototypeBank::from_unnormalized(array![[1.0, 0.0]], array![[0.0, 1.0]], 30.0, 0.0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let set = FeatureSet::new(2, vec![rec("a", "d", Label::BonaFide, vec![r, r])]).unwrap();
        assert!((loss_proto(&set, &bank).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_case_closed_form() {
        let bank = PrototypeBank::from_unnormalized(array![[1.0, 0.0]], array![[-1.0, 0.0]], 30.0, 0.0).unwrap();
        let set = FeatureSet::new(2, vec![rec("a", "d", Label::BonaFide, vec![1.0, 0.0])]).unwrap();
        let closed = (-60f64).exp().ln_1p();
        assert!((closed - 8.756510762696521e-27).abs() < 1e-36);
        let l = loss_proto(&set, &bank).unwrap();
        // clamping shifts the logits by O(s·1e-7)
        assert!((l / closed - 1.0).abs() < 1e-5, "{l} vs {closed}");
    }

    #[test]
    fn margin_never_lowers_loss() {
        let mut rng = rng::seeded(3);
        for _ in 0..50 {
            let bf = Array2::from_shape_fn((2, 5), |_| rng::gaussian(&mut rng));
            let sp = Array2::from_shape_fn((2, 5), |_| rng::gaussian(&mut rng));
            let recs = (0..6)
                .map(|i| {
                    let l = if i % 2 == 0 { Label::BonaFide } else { Label::Spoof };
                    rec(&format!("r{i}"), "d", l, random_unit(&mut rng, 5))
                })
                .collect();
            let set = FeatureSet::new(5, recs).unwrap();
            // monotone only while θ_y + m stays within [0, π]
            let probe = PrototypeBank::from_unnormalized(bf.clone(), sp.clone(), 30.0, 0.0).unwrap();
            let min_sim = set
                .iter()
                .map(|r| linalg::dot(&r.vector, probe.class_mean(r.label).as_slice().unwrap()))
                .fold(f64::INFINITY, f64::min);
            if min_sim.acos() + 1.0 > std::f64::consts::PI {
                continue;
            }
            let mut prev = f64::NEG_INFINITY;
            for m in [0.0, 0.1, 0.3, 0.6, 1.0] {
                let bank = PrototypeBank::from_unnormalized(bf.clone(), sp.clone(), 30.0, m).unwrap();
                let l = loss_proto(&set, &bank).unwrap();
                assert!(l >= prev);
                prev = l;
            }
        }
    }

    #[test]
    fn orth_examples() {
        let same = PrototypeBank::from_unnormalized(
            array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            30.0,
            0.5,
        )
        .unwrap();
        assert!((loss_orth(&same) - 2.0).abs() < 1e-15);
        let ortho = same.with_class(Label::BonaFide, array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(loss_orth(&ortho), 0.0);
    }

    #[test]
    fn orth_rotation_invariant() {
        let mut rng = rng::seeded(5);
        let p = Array2::from_shape_fn((3, 4), |_| rng::gaussian(&mut rng));
        let bank = PrototypeBank::from_unnormalized(p.clone(), p.clone(), 30.0, 0.5).unwrap();
        // Householder reflection I - 2vvᵀ is orthogonal
        let v = ndarray::Array1::from(random_unit(&mut rng, 4));
        let h = Array2::eye(4) - &(v.clone().insert_axis(Axis(1)).dot(&v.insert_axis(Axis(0))) * 2.0);
        let rotated = bank.with_class(Label::Spoof, bank.centroids(Label::Spoof).dot(&h)).unwrap();
        assert!((loss_orth(&bank) - loss_orth(&rotated)).abs() < 1e-12);
    }

    #[test]
    fn supcon_identical_views_is_ln3() {
        let f = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let out = supcon(f.view(), &[0, 0, 0, 0], 1.0).unwrap();
        assert!((out.loss - 3f64.ln()).abs() < 1e-15);
        let set = FeatureSet::new(
            2,
            vec![rec("a", "d", Label::BonaFide, vec![1.0, 0.0]), rec("b", "d", Label::BonaFide, vec![1.0, 0.0])],
        )
        .unwrap();
        let out = loss_supcon(&set, &[0, 0], 1.0, 0.0, &mut rng::seeded(0)).unwrap();
        assert!((out.loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn supcon_distinct_groups_only_own_view() {
        // rows: a, b, a', b' with a ⟂ b; each anchor's positive is its own view
        let f = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let out = supcon(f.view(), &[0, 1, 0, 1], 1.0).unwrap();
        let e = 1f64.exp();
        let per_anchor = -(e / (e + 2.0)).ln();
        assert!((out.loss - per_anchor).abs() < 1e-15);
        assert_eq!(out.no_positive, 0);
        let lonely = supcon(f.view(), &[0, 1, 2, 3], 1.0).unwrap();
        assert_eq!((lonely.loss, lonely.no_positive), (0.0, 4));
    }

    #[test]
    fn supcon_permutation_invariant() {
        let mut rng = rng::seeded(8);
        let f = Array2::from_shape_fn((6, 3), |_| rng::gaussian(&mut rng));
        let groups = [0, 1, 0, 2, 1, 0];
        let perm = [3, 0, 5, 1, 4, 2];
        let pf = f.select(Axis(0), &perm);
        let pg: Vec<usize> = perm.iter().map(|&i| groups[i]).collect();
        let a = supcon(f.view(), &groups, 0.5).unwrap().loss;
        let b = supcon(pf.view(), &pg, 0.5).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
        assert!(supcon(f.view(), &groups, 0.0).is_err());
    }

    #[test]
    fn supcon_gradient_matches_fd() {
        let mut rng = rng::seeded(11);
        let f = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let groups = [0, 1, 0, 1, 2, 0];
        let g = supcon(f.view(), &groups, 0.3).unwrap().grad;
        let h = 1e-5;
        for idx in [(0, 0), (2, 3), (4, 1), (5, 2)] {
            let mut up = f.clone();
            up[idx] += h;
            let mut dn = f.clone();
            dn[idx] -= h;
            let fd = (supcon(up.view(), &groups, 0.3).unwrap().loss - supcon(dn.view(), &groups, 0.3).unwrap().loss)
                / (2.0 * h);
            assert!((fd - g[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn proto_and_orth_gradients_match_fd() {
        let mut rng = rng::seeded(21);
        let cents = [
            Array2::from_shape_fn((2, 4), |_| rng::gaussian(&mut rng) * 0.5),
            Array2::from_shape_fn((2, 4), |_| rng::gaussian(&mut rng) * 0.5),
        ];
        let z = Array2::from_shape_fn((5, 4), |_| rng::gaussian(&mut rng) * 0.4);
        let labels = [Label::BonaFide, Label::Spoof, Label::Spoof, Label::BonaFide, Label::Spoof];
        let f = |c: &[Array2<f64>; 2], m: f64| proto_loss_grad(c, 30.0, m, z.view(), &labels).0 + orth_loss_grad(c).0;
        let (_, gp, gm) = proto_loss_grad(&cents, 30.0, 0.4, z.view(), &labels);
        let (_, go) = orth_loss_grad(&cents);
        let h = 1e-5;
        for c in 0..2 {
            for idx in [(0, 0), (1, 2), (0, 3)] {
                let mut up = cents.clone();
                up[c][idx] += h;
                let mut dn = cents.clone();
                dn[c][idx] -= h;
                let fd = (f(&up, 0.4) - f(&dn, 0.4)) / (2.0 * h);
                let an = gp[c][idx] + go[c][idx];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} vs {an}");
            }
        }
        let fd = (f(&cents, 0.4 + h) - f(&cents, 0.4 - h)) / (2.0 * h);
        assert!((fd - gm).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} vs {gm}");
    }

    #[test]
    fn fine_groups_split_domain_and_attack() {
        let set = FeatureSet::new(
            1,
            vec![
                rec("a", "d0", Label::BonaFide, vec![1.0]),
                rec("b", "d1", Label::BonaFide, vec![1.0]),
                rec("c", "d0", Label::Spoof, vec![1.0]),
                rec("d", "d0", Label::BonaFide, vec![1.0]),
            ],
        )
        .unwrap();
        let g = fine_groups(&set, FineGrouping::DomainAttack);
        assert_eq!(g[0], g[3]);
        assert_ne!(g[0], g[1]);
        assert_ne!(g[0], g[2]);
        let g = fine_groups(&set, FineGrouping::Attack);
        assert_eq!(g[0], g[1]);
        assert_eq!(coarse_groups(&set), vec![0, 0, 1, 0]);
    }
}
