//! Synthetic multi-domain two-class data on the unit sphere.
//!
//! Each class is a mixture of sub-cluster centers. The center layout depends
//! only on the dimension and the number of sub-clusters, never on the sampling
//! seed. Domain `d` rotates every center by `d * angle` in the plane of axes 0
//! and 1, translates it by `d * shift` along axis 2, and renormalizes. Samples
//! add isotropic Gaussian noise to a uniformly chosen center and renormalize.
//!
//! The two class anchors share their in-plane part, so a domain step moves
//! both classes alike, and differ off the plane. Sub-cluster centers are
//! strung along a nuisance axis that partly overlaps the class difference,
//! which makes each class elongated rather than isotropic. Bona fide centers
//! scatter tightly around that line; spoof centers (one per attack type)
//! scatter further.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureRecord, FeatureSet, Label};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

const LAYOUT_SEED: u64 = 0x0a11_ce5e_ed00_0001;
const BONA_FIDE_SPREAD: f64 = 0.2;
const SPOOF_SPREAD: f64 = 0.4;
/// Share of each anchor lying in the rotation plane.
const IN_PLANE_WEIGHT: f64 = 0.8;
/// Fraction of anchor variance common to both classes off the plane.
const SHARED: f64 = 0.3;
/// Half-length of the line along which a class's sub-clusters are strung.
const NUISANCE: f64 = 1.0;
/// Cosine between the nuisance axis and the off-plane class difference.
const NUISANCE_OVERLAP: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dimension: usize,
    pub domains: usize,
    pub per_domain: usize,
    pub clusters_per_class: usize,
    /// Rotation per domain step, radians.
    pub angle: f64,
    pub shift: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dimension: 16,
            domains: 4,
            per_domain: 500,
            clusters_per_class: 5,
            angle: 0.6,
            shift: 0.3,
            noise: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension < 5 {
            return Err(Error::Config("synthetic data needs dimension >= 5".into()));
        }
        if self.domains == 0 || self.per_domain == 0 || self.clusters_per_class == 0 {
            return Err(Error::Config(
                "domains, per-domain count and clusters per class must all be >= 1".into(),
            ));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise scale must be positive".into()));
        }
        if !self.angle.is_finite() || !self.shift.is_finite() {
            return Err(Error::Config("angle and shift must be finite".into()));
        }
        Ok(())
    }
}

/// Cluster centers of the undisplaced domain, `[class][cluster]`.
pub(crate) fn center_layout(dimension: usize, clusters: usize) -> [Vec<Vec<f64>>; 2] {
    let mut layout_rng = rng::seeded(rng::derive_seed(
        LAYOUT_SEED,
        &format!("D{dimension}-C{clusters}"),
    ));
    let off_plane = |rng: &mut rng::StreamRng| -> Vec<f64> {
        (0..dimension).map(|i| if i < 3 { 0.0 } else { rng::gaussian(rng) }).collect()
    };
    let shared = off_plane(&mut layout_rng);
    let anchor = |rng: &mut rng::StreamRng| {
        let own = off_plane(rng);
        let mut v: Vec<f64> = shared
            .iter()
            .zip(&own)
            .map(|(s, o)| SHARED.sqrt() * s + (1.0 - SHARED).sqrt() * o)
            .collect();
        let off = linalg::norm(&v).max(1e-12);
        for x in v.iter_mut() {
            *x *= (1.0 - IN_PLANE_WEIGHT * IN_PLANE_WEIGHT).sqrt() / off;
        }
        v[0] = IN_PLANE_WEIGHT;
        v
    };
    let anchors = [anchor(&mut layout_rng), anchor(&mut layout_rng)];
    let diff: Vec<f64> = anchors[0].iter().zip(&anchors[1]).map(|(a, b)| a - b).collect();
    let along = linalg::normalized(&diff).expect("distinct anchors");
    let mut across = off_plane(&mut layout_rng);
    let proj = linalg::dot(&across, &along);
    for (x, d) in across.iter_mut().zip(&along) {
        *x -= proj * d;
    }
    let across = linalg::normalized(&across).expect("dimension >= 5");
    let cross = (1.0 - NUISANCE_OVERLAP * NUISANCE_OVERLAP).sqrt();
    let axis: Vec<f64> = along.iter().zip(&across).map(|(d, r)| NUISANCE_OVERLAP * d + cross * r).collect();
    let spreads = [BONA_FIDE_SPREAD, SPOOF_SPREAD];
    let scale_of = |c: usize| spreads[c] / (dimension as f64).sqrt();
    let mut out: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for c in 0..2 {
        for k in 0..clusters {
            let t = if clusters == 1 { 0.0 } else { -1.0 + 2.0 * k as f64 / (clusters - 1) as f64 };
            let v: Vec<f64> = anchors[c]
                .iter()
                .zip(&axis)
                .map(|(a, u)| a + NUISANCE * t * u + scale_of(c) * rng::gaussian(&mut layout_rng))
                .collect();
            out[c].push(linalg::normalized(&v).expect("nonzero center"));
        }
    }
    out
}

fn displace(center: &[f64], domain: usize, cfg: &SynthConfig) -> Vec<f64> {
    let theta = domain as f64 * cfg.angle;
    let (s, c) = theta.sin_cos();
    let mut v = center.to_vec();
    v[0] = c * center[0] - s * center[1];
    v[1] = s * center[0] + c * center[1];
    v[2] += domain as f64 * cfg.shift;
    linalg::normalized(&v).expect("displaced center is nonzero")
}

/// Generates one feature set per domain, tagged `domain<d>`.
pub fn synth_multidomain(config: &SynthConfig) -> Result<Vec<FeatureSet>> {
    config.validate()?;
    let dim = config.dimension;
    let layout = center_layout(dim, config.clusters_per_class);
    let mut domains = Vec::with_capacity(config.domains);
    for d in 0..config.domains {
        let centers: Vec<Vec<Vec<f64>>> = layout
            .iter()
            .map(|cls| cls.iter().map(|c| displace(c, d, config)).collect())
            .collect();
        let mut rng = rng::stream(config.seed, &format!("synth-domain-{d}"));
        let mut records = Vec::with_capacity(config.per_domain);
        for i in 0..config.per_domain {
            let label = if i % 2 == 0 { Label::BonaFide } else { Label::Spoof };
            let k = rng.random_range(0..config.clusters_per_class);
            let center = &centers[label.index()][k];
            let raw: Vec<f64> = center
                .iter()
                .map(|x| x + config.noise * rng::gaussian(&mut rng))
                .collect();
            let vector = linalg::normalized(&raw)
                .ok_or_else(|| Error::Degenerate("zero synthetic sample".into()))?;
            let attack = match label {
                Label::BonaFide => String::new(),
                Label::Spoof => format!("attack{k}"),
            };
            records.push(FeatureRecord {
                id: format!("d{d}-{i:05}"),
                domain: format!("domain{d}"),
                label,
                attack,
                vector,
            });
        }
        domains.push(FeatureSet::new(dim, records)?);
    }
    Ok(domains)
}
