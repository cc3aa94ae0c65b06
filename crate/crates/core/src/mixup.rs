//! Geodesic mixup.
//!
//! Synthetic batches are free-support entropic Wasserstein barycenters
//! between a class's sub-centroids and its (perturbed) few-shot features:
//!
//! ```text
//! min_μ  w W²(μ, μ_source) + (1 - w) W²(μ, μ_target)
//! ```
//!
//! with `w ~ Beta(a, b)`. `w = 1` reproduces the source cloud and `w = 0` the
//! target cloud.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Label};
use crate::linalg;
use crate::ot::{cost_sqeuclidean, sinkhorn_log, uniform_weights, Potentials};
use crate::proto::PrototypeBank;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarycenterConfig {
    /// Support count; `None` uses the bank's `K`.
    pub q: Option<usize>,
    pub epsilon: f64,
    /// Fixed-point iterations.
    pub iterations: usize,
    /// Stop once no support moves farther than this.
    pub tol: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    /// Noise added to few-shot features before each barycenter.
    pub sigma: f64,
    /// Inner Sinkhorn limits.
    pub max_iter: usize,
    pub sinkhorn_tol: f64,
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        BarycenterConfig {
            q: None,
            epsilon: 0.01,
            iterations: 10,
            tol: 1e-6,
            beta_a: 0.4,
            beta_b: 0.4,
            sigma: 0.05,
            max_iter: 500,
            sinkhorn_tol: 1e-4,
        }
    }
}

impl BarycenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == Some(0) || self.iterations == 0 || self.max_iter == 0 {
            return Err(Error::Config("q, iterations and max_iter must be at least 1".into()));
        }
        if !(self.beta_a > 0.0 && self.beta_b > 0.0 && self.beta_a.is_finite() && self.beta_b.is_finite()) {
            return Err(Error::Config("beta parameters must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    /// `Q x D`, unit rows.
    pub points: Array2<f64>,
    pub label: Label,
    pub w: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct Barycenter {
    /// `Q x D`, not normalized.
    pub points: Array2<f64>,
    /// Entropic objective at the initialization and after every update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// One `Beta(a, b)` draw as `X / (X + Y)` with `X ~ Gamma(a)`, `Y ~ Gamma(b)`.
pub fn beta_sample(a: f64, b: f64, rng: &mut StreamRng) -> Result<f64> {
    let ga = Gamma::new(a, 1.0).map_err(|e| Error::Config(format!("beta parameter a: {e}")))?;
    let gb = Gamma::new(b, 1.0).map_err(|e| Error::Config(format!("beta parameter b: {e}")))?;
    loop {
        let x = ga.sample(rng);
        let y = gb.sample(rng);
        let s = x + y;
        if s > 0.0 && s.is_finite() {
            return Ok(x / s);
        }
    }
}

/// `n` indices into `0..len`: a permutation prefix when `len >= n`, otherwise
/// a full permutation topped up with uniform draws.
fn resample(len: usize, n: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    while idx.len() < n {
        idx.push(rng.random_range(0..len));
    }
    idx
}

struct Side<'a> {
    points: ArrayView2<'a, f64>,
    weights: Vec<f64>,
    warm: Option<Potentials>,
}

impl Side<'_> {
    /// Entropic OT value from `x` and the barycentric images of its rows.
    ///
    /// Starts from the previous solve's potentials; if that does not
    /// converge, retries from scratch and keeps the more feasible plan.
    fn solve(&mut self, x: &Array2<f64>, cfg: &BarycenterConfig) -> Result<(f64, Array2<f64>)> {
        let cost = cost_sqeuclidean(x.view(), self.points)?;
        let q = uniform_weights(x.nrows()).to_vec();
        let run = |warm| {
            sinkhorn_log(
                cost.values().view(),
                &q,
                &self.weights,
                cfg.epsilon,
                cfg.max_iter,
                cfg.sinkhorn_tol,
                warm,
            )
        };
        let mut out = run(self.warm.take());
        if !out.converged {
            let cold = run(None);
            if cold.violation < out.violation {
                out = cold;
            }
        }
        self.warm = Some(out.potentials);
        let gamma = out.gamma;
        let value: f64 = gamma
            .iter()
            .zip(cost.values().iter())
            .map(|(&g, &c)| g * c + if g > 0.0 { cfg.epsilon * g * (g.ln() - 1.0) } else { 0.0 })
            .sum();
        let mut images = gamma.dot(&self.points);
        for (mut row, g) in images.rows_mut().into_iter().zip(gamma.rows()) {
            let mass = g.sum();
            if mass > 0.0 {
                row.mapv_inplace(|v| v / mass);
            }
        }
        Ok((value, images))
    }
}

/// Fixed-point free-support barycenter of two uniform clouds.
///
/// Supports start at a `w`-weighted mix of a random matching between the two
/// clouds. Each step moves every support to `w · image_source + (1 - w) ·
/// image_target`, the barycentric images under fresh Sinkhorn plans.
pub fn free_support_barycenter(
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    w: f64,
    q: usize,
    config: &BarycenterConfig,
    rng: &mut StreamRng,
) -> Result<Barycenter> {
    config.validate()?;
    if source.nrows() == 0 || target.nrows() == 0 {
        return Err(Error::Insufficient("barycenter inputs must be nonempty".into()));
    }
    if source.ncols() != target.ncols() {
        return Err(Error::DimensionMismatch {
            expected: source.ncols(),
            actual: target.ncols(),
        });
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Config(format!("mixing weight must lie in [0, 1], got {w}")));
    }
    if q == 0 {
        return Err(Error::Config("q must be at least 1".into()));
    }
    let si = resample(source.nrows(), q, rng);
    let ti = resample(target.nrows(), q, rng);
    let mut x = Array2::zeros((q, source.ncols()));
    for (r, (&i, &j)) in si.iter().zip(&ti).enumerate() {
        let row = &source.row(i) * w + &target.row(j) * (1.0 - w);
        x.row_mut(r).assign(&row);
    }

    let mut src = Side {
        points: source,
        weights: uniform_weights(source.nrows()).to_vec(),
        warm: None,
    };
    let mut tgt = Side {
        points: target,
        weights: uniform_weights(target.nrows()).to_vec(),
        warm: None,
    };
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut iterations = 0;
    let (mut vs, mut is) = src.solve(&x, config)?;
    let (mut vt, mut it) = tgt.solve(&x, config)?;
    trace.push(w * vs + (1.0 - w) * vt);
    while iterations < config.iterations {
        let next = &is * w + &it * (1.0 - w);
        let shift = (&next - &x)
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max);
        x = next;
        iterations += 1;
        (vs, is) = src.solve(&x, config)?;
        (vt, it) = tgt.solve(&x, config)?;
        trace.push(w * vs + (1.0 - w) * vt);
        if shift < config.tol {
            break;
        }
    }
    Ok(Barycenter {
        points: x,
        objective_trace: trace,
        iterations,
    })
}

/// Adds `N(0, σ²)` noise to every row and re-normalizes.
pub fn perturb(z: ArrayView2<f64>, sigma: f64, rng: &mut StreamRng) -> Array2<f64> {
    let mut out = z.to_owned();
    if sigma > 0.0 {
        out.mapv_inplace(|v| v + sigma * rng::gaussian(rng));
        linalg::normalize_rows(&mut out);
    }
    out
}

/// Draws one synthetic batch for class `label`.
pub fn sample_mixup_batch(
    bank: &PrototypeBank,
    support: &FeatureSet,
    label: Label,
    config: &BarycenterConfig,
    rng: &mut StreamRng,
) -> Result<SyntheticBatch> {
    config.validate()?;
    let feats = support.class_matrix(label);
    if feats.nrows() == 0 {
        return Err(Error::Insufficient(format!("support has no {label} records")));
    }
    let w = beta_sample(config.beta_a, config.beta_b, rng)?;
    let target = perturb(feats.view(), config.sigma, rng);
    let q = config.q.unwrap_or(bank.k());
    let bary = free_support_barycenter(bank.centroids(label), target.view(), w, q, config, rng)?;
    let mut points = bary.points;
    if points.rows().into_iter().any(|r| !(r.dot(&r) > 0.0)) {
        return Err(Error::Degenerate("barycenter support collapsed to the origin".into()));
    }
    linalg::normalize_rows(&mut points);
    Ok(SyntheticBatch {
        points,
        label,
        w,
        iteration: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::FeatureRecord;
    use crate::ot::exact_ot_small;
    use ndarray::array;

    // near-exact inner plans, so fixed-point properties hold tightly
    fn cfg() -> BarycenterConfig {
        BarycenterConfig {
            max_iter: 5000,
            sinkhorn_tol: 1e-9,
            ..Default::default()
        }
    }

    #[test]
    fn beta_moments() {
        let mut r = rng::seeded(1);
        let n = 100_000;
        for (a, b, var) in [(1.0, 1.0, 1.0 / 12.0), (0.4, 0.4, 0.25 / 1.8)] {
            let xs: Vec<f64> = (0..n).map(|_| beta_sample(a, b, &mut r).unwrap()).collect();
            assert!(xs.iter().all(|x| (0.0..=1.0).contains(x)));
            let mean = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((mean - 0.5).abs() < 0.01, "{mean}");
            assert!((v - var).abs() < 0.005, "{v} vs {var}");
        }
        assert!(beta_sample(0.0, 1.0, &mut r).is_err());
    }

    #[test]
    fn point_masses_interpolate() {
        let a = array![[0.0, 0.0]];
        let b = array![[1.0, 0.0]];
        for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let out = free_support_barycenter(a.view(), b.view(), w, 1, &cfg(), &mut rng::seeded(0)).unwrap();
            assert!((out.points[[0, 0]] - (1.0 - w)).abs() < 1e-6);
            assert!(out.points[[0, 1]].abs() < 1e-6);
        }
    }

    #[test]
    fn self_barycenter_is_fixed() {
        let p = array![[0.3, -0.2, 0.9]];
        for w in [0.0, 0.4, 1.0] {
            let out = free_support_barycenter(p.view(), p.view(), w, 4, &cfg(), &mut rng::seeded(2)).unwrap();
            for row in out.points.rows() {
                assert!((&row - &p.row(0)).iter().all(|v| v.abs() < 1e-9));
            }
        }
    }

    #[test]
    fn objective_never_increases() {
        let mut r = rng::seeded(3);
        for _ in 0..20 {
            let s = Array2::from_shape_fn((5, 3), |_| rng::gaussian(&mut r));
            let t = Array2::from_shape_fn((7, 3), |_| rng::gaussian(&mut r) + 1.0);
            let w: f64 = r.random();
            let out = free_support_barycenter(s.view(), t.view(), w, 5, &cfg(), &mut r).unwrap();
            for pair in out.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-8, "{:?}", out.objective_trace);
            }
        }
    }

    #[test]
    fn source_endpoint_reproduces_source() {
        let mut r = rng::seeded(4);
        let q = 4;
        let s = Array2::from_shape_fn((q, 3), |_| rng::gaussian(&mut r));
        let t = Array2::from_shape_fn((6, 3), |_| rng::gaussian(&mut r) + 2.0);
        let c = cfg();
        let out = free_support_barycenter(s.view(), t.view(), 1.0, q, &c, &mut r).unwrap();
        assert!(out.objective_trace.last().unwrap() <= &out.objective_trace[0]);
        let u = uniform_weights(q).to_vec();
        let cs = cost_sqeuclidean(out.points.view(), s.view()).unwrap();
        let to_src = exact_ot_small(&cs, &u, &u).unwrap().cost(&cs);
        assert!(to_src < 2.0 * c.epsilon * (q as f64).ln(), "{to_src}");
        let ut = uniform_weights(6).to_vec();
        let ct = cost_sqeuclidean(out.points.view(), t.view()).unwrap();
        let to_tgt = exact_ot_small(&ct, &u, &ut).unwrap().cost(&ct);
        assert!(to_src <= to_tgt);
    }

    fn support(rows: &Array2<f64>, label: Label) -> FeatureSet {
        let recs = rows
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let attack = if label == Label::Spoof { "print" } else { "" };
                FeatureRecord::new(format!("s{i}"), "t", label, attack, r.to_vec()).unwrap()
            })
            .collect();
        FeatureSet::new(rows.ncols(), recs).unwrap()
    }

    #[test]
    fn degenerate_self_batch_stays_on_centroids() {
        let c = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let bank = PrototypeBank::new(c.clone(), c.clone(), 30.0, 0.5).unwrap();
        let sup = support(&c, Label::BonaFide);
        let config = BarycenterConfig { sigma: 0.0, ..cfg() };
        let mut r = rng::seeded(5);
        for _ in 0..10 {
            let batch = sample_mixup_batch(&bank, &sup, Label::BonaFide, &config, &mut r).unwrap();
            assert_eq!(batch.label, Label::BonaFide);
            assert!((0.0..=1.0).contains(&batch.w));
            for row in batch.points.rows() {
                let best = c.rows().into_iter().map(|p| linalg::angle_between(row, p)).fold(f64::INFINITY, f64::min);
                assert!(best < 1e-3, "{best}");
            }
        }
    }

    #[test]
    fn batches_replay_and_are_unit() {
        let mut r = rng::seeded(6);
        let mut c = Array2::from_shape_fn((4, 5), |_| rng::gaussian(&mut r));
        linalg::normalize_rows(&mut c);
        let bank = PrototypeBank::new(c.clone(), c.clone(), 30.0, 0.5).unwrap();
        let mut f = Array2::from_shape_fn((3, 5), |_| rng::gaussian(&mut r));
        linalg::normalize_rows(&mut f);
        let sup = support(&f, Label::Spoof);
        let a = sample_mixup_batch(&bank, &sup, Label::Spoof, &cfg(), &mut rng::seeded(9)).unwrap();
        let b = sample_mixup_batch(&bank, &sup, Label::Spoof, &cfg(), &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.nrows(), 4);
        for row in a.points.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
        assert!(sample_mixup_batch(&bank, &sup, Label::BonaFide, &cfg(), &mut rng::seeded(9)).is_err());
    }
}
