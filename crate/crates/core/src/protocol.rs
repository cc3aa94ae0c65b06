//! Leave-one-domain-out experiment protocol on synthetic data.
//!
//! For each seed: generate the domains, train prototypes on every domain
//! but the held-out one, draw a few-shot support set from the held-out domain
//! and evaluate every method on the rest of it. The evaluation set is fixed
//! per seed: it is what remains after drawing the largest requested support,
//! and smaller supports are drawn from that largest one.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt_free::{adapt_one_class, adapt_prototypes};
use crate::adapt_light::{train_light, LightTrainConfig};
use crate::error::{Error, Result};
use crate::eval::{
    baseline_linear_probe, baseline_manifold_mixup, baseline_ncm, score_set, MetricReport, Scorer,
};
use crate::feature_store::{split_few_shot, synth_multidomain, FeatureSet, Label, SynthConfig};
use crate::ot::OTConfig;
use crate::proto::{train_prototypes, PrototypeBank, TrainConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ZeroShot,
    Free,
    Light,
    Ncm,
    LinearProbe,
    ManifoldMixup,
    /// Training-free adaptation with bona fide support only.
    OneClass,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::ZeroShot,
        Method::Free,
        Method::Light,
        Method::Ncm,
        Method::LinearProbe,
        Method::ManifoldMixup,
        Method::OneClass,
    ];

    /// The six methods of the scaling sweep.
    pub const SWEEP: [Method; 6] = [
        Method::ZeroShot,
        Method::Free,
        Method::Light,
        Method::Ncm,
        Method::LinearProbe,
        Method::ManifoldMixup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ZeroShot => "zero-shot",
            Method::Free => "free",
            Method::Light => "light",
            Method::Ncm => "ncm",
            Method::LinearProbe => "linear-probe",
            Method::ManifoldMixup => "manifold-mixup",
            Method::OneClass => "one-class",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub ot: OTConfig,
    pub light: LightTrainConfig,
    /// Held-out domain; `None` holds out the last one.
    pub target_domain: Option<usize>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            ot: OTConfig::default(),
            light: LightTrainConfig::default(),
            target_domain: None,
        }
    }
}

/// One `(shots, method, seed)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub shots: usize,
    pub method: Method,
    pub seed: u64,
    pub report: MetricReport,
}

pub const SWEEP_HEADER: &str = "shots,method,seed,hter,auc,tpr_at_fpr1";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.shots, self.method, self.seed, self.report.hter, self.report.auc, self.report.tpr_at_fpr1
        )
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

/// Everything a seed's cells share.
pub struct SeedContext {
    pub seed: u64,
    pub bank: PrototypeBank,
    /// Largest support drawn; smaller supports are subsets of it.
    pub support_pool: FeatureSet,
    pub evaluation: FeatureSet,
}

impl SeedContext {
    pub fn prepare(config: &ProtocolConfig, seed: u64, max_shots: usize) -> Result<Self> {
        let synth = SynthConfig {
            seed: derive_seed(seed, "synth"),
            ..config.synth.clone()
        };
        let domains = synth_multidomain(&synth)?;
        if domains.len() < 2 {
            return Err(Error::Config("leave-one-domain-out needs at least 2 domains".into()));
        }
        let target = config.target_domain.unwrap_or(domains.len() - 1);
        if target >= domains.len() {
            return Err(Error::Config(format!("target domain {target} out of range")));
        }
        let sources: Vec<FeatureSet> = domains
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target)
            .map(|(_, d)| d.clone())
            .collect();
        let train = TrainConfig {
            seed: derive_seed(seed, "train"),
            ..config.train.clone()
        };
        let bank = train_prototypes(&sources, &train)?.bank;
        let (support_pool, evaluation) = split_few_shot(&domains[target], max_shots, derive_seed(seed, "split"))?;
        Ok(SeedContext {
            seed,
            bank,
            support_pool,
            evaluation,
        })
    }

    pub fn support(&self, shots: usize) -> Result<FeatureSet> {
        if shots == self.support_pool.count(Label::BonaFide) {
            return Ok(self.support_pool.clone());
        }
        let seed = derive_seed(self.seed, &format!("support-{shots}"));
        Ok(split_few_shot(&self.support_pool, shots, seed)?.0)
    }

    pub fn run(&self, config: &ProtocolConfig, method: Method, shots: usize) -> Result<MetricReport> {
        let support = self.support(shots)?;
        let light = LightTrainConfig {
            seed: derive_seed(self.seed, &format!("{method}-{shots}")),
            ..config.light.clone()
        };
        let scorer: Box<dyn Scorer> = match method {
            Method::ZeroShot => Box::new(self.bank.clone()),
            Method::Free => Box::new(adapt_prototypes(&self.bank, &support, &config.ot)?.bank),
            Method::OneClass => {
                Box::new(adapt_one_class(&self.bank, &support.of_class(Label::BonaFide), &config.ot)?.bank)
            }
            Method::Light => Box::new(train_light(&self.bank, &support, &light)?.classifier),
            Method::Ncm => Box::new(baseline_ncm(&support)?),
            Method::LinearProbe => Box::new(baseline_linear_probe(&self.bank, &support, &light)?.classifier),
            Method::ManifoldMixup => Box::new(baseline_manifold_mixup(&self.bank, &support, &light)?.classifier),
        };
        MetricReport::compute(&score_set(scorer.as_ref(), &self.evaluation)?)
    }
}

/// Runs every `(seed, shots, method)` cell. Rows come back in seed, shots,
/// method order regardless of scheduling.
pub fn run_sweep(config: &ProtocolConfig, seeds: &[u64], shots: &[usize], methods: &[Method]) -> Result<Vec<SweepRow>> {
    let max_shots = shots.iter().copied().max().ok_or_else(|| Error::Config("no shot counts".into()))?;
    let per_seed: Vec<Result<Vec<SweepRow>>> = seeds
        .par_iter()
        .map(|&seed| {
            let ctx = SeedContext::prepare(config, seed, max_shots)?;
            let cells: Vec<(usize, Method)> = shots
                .iter()
                .flat_map(|&s| methods.iter().map(move |&m| (s, m)))
                .collect();
            cells
                .par_iter()
                .map(|&(s, m)| {
                    let report = ctx.run(config, m, s)?;
                    log::info!("seed {seed} shots {s} {m}: hter {:.4} auc {:.4}", report.hter, report.auc);
                    Ok(SweepRow {
                        shots: s,
                        method: m,
                        seed,
                        report,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Mean of `metric` over rows matching `shots` and `method`.
pub fn mean_metric(rows: &[SweepRow], shots: usize, method: Method, metric: impl Fn(&MetricReport) -> f64) -> f64 {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.shots == shots && r.method == method)
        .map(|r| metric(&r.report))
        .collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}
