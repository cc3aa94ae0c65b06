//! Command-line front end.
//!
//! Every subcommand resolves its settings as flag, then `--config` file, then
//! module default, and writes the effective settings as
//! `<out>/<subcommand>.config.json`. Component seeds are derived from the
//! single `--seed` by fixed labels.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::adapt_free::{adapt_one_class, adapt_prototypes, AdaptedBank};
use crate::adapt_light::{load_linear_classifier, save_linear_classifier, train_light, LightTrainConfig};
use crate::error::Error;
use crate::eval::{roc_csv, roc_points, score_set, MetricReport, ScoreSet, Scorer};
use crate::feature_store::{
    load_feature_table, save_feature_table, split_few_shot, synth_multidomain, FeatureRecord, FeatureSet, Label,
    SynthConfig,
};
use crate::mixup::sample_mixup_batch;
use crate::ot::OTConfig;
use crate::proto::{load_prototype_bank, save_prototype_bank, train_prototypes, PrototypeBank, TrainConfig};
use crate::protocol::{run_sweep, sweep_csv, Method, ProtocolConfig};
use crate::rng::{derive_seed, stream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Caps the worker pool when set to a positive integer.
pub const THREADS_ENV: &str = "PROTO_OT_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, unreadable or invalid input.
    Usage(String),
    /// Failure while computing or writing results.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Degenerate(_) | Error::DegenerateRow { .. } | Error::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Loads an input; any failure, including a missing file, is a usage error.
fn input<T>(r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

/// Settings shared by all subcommands; the `--config` file uses this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub shots: usize,
    pub strict: bool,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub ot: OTConfig,
    pub light: LightTrainConfig,
    /// Held-out domain for sweeps; `None` holds out the last one.
    pub target_domain: Option<usize>,
    pub sweep_shots: Vec<usize>,
    pub sweep_seeds: usize,
    pub methods: Vec<Method>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            shots: 10,
            strict: false,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            ot: OTConfig::default(),
            light: LightTrainConfig::default(),
            target_domain: None,
            sweep_shots: vec![5, 10, 20, 50],
            sweep_seeds: 5,
            methods: Method::SWEEP.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Replaces component seeds with ones derived from the global seed.
    fn derive_seeds(&mut self) {
        self.synth.seed = derive_seed(self.seed, "synth");
        self.train.seed = derive_seed(self.seed, "train");
        self.light.seed = derive_seed(self.seed, "light");
    }

    fn validate(&self) -> CliResult<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.ot.validate()?;
        self.light.validate()?;
        Ok(())
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            synth: self.synth.clone(),
            train: self.train.clone(),
            ot: self.ot.clone(),
            light: self.light.clone(),
            target_domain: self.target_domain,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "protoadapt", version, about = "Prototype anti-spoofing classifiers with few-shot OT adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Treat solver non-convergence as a failure.
    #[arg(long)]
    pub strict: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SupportArgs {
    /// Prototype bank to adapt.
    #[arg(long)]
    pub bank: PathBuf,
    /// Few-shot support table, used as is.
    #[arg(long, conflicts_with = "target", required_unless_present = "target")]
    pub support: Option<PathBuf>,
    /// Target-domain table to draw `--shots` per class from; the remainder is
    /// written as `eval.feat`.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub shots: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MixupArgs {
    #[arg(long = "beta-a")]
    pub beta_a: Option<f64>,
    #[arg(long = "beta-b")]
    pub beta_b: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdaptMode {
    Free,
    Light,
    OneClass,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic multi-domain feature tables.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        domains: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long = "per-domain")]
        per_domain: Option<usize>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        angle: Option<f64>,
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train a prototype bank on source-domain tables.
    Train {
        #[command(flatten)]
        common: Common,
        /// Source-domain feature tables.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long = "batch-size")]
        batch_size: Option<usize>,
    },
    /// Adapt a bank to a target domain.
    Adapt {
        #[arg(long, value_enum)]
        mode: AdaptMode,
        #[command(flatten)]
        args: AdaptArgs,
    },
    /// Training-free adaptation (same as `adapt --mode free`).
    AdaptFree {
        #[command(flatten)]
        args: AdaptArgs,
    },
    /// Lightweight classifier training (same as `adapt --mode light`).
    AdaptLight {
        #[command(flatten)]
        args: AdaptArgs,
    },
    /// Write sampled geodesic-mixup batches as feature tables.
    MixupDump {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        support: SupportArgs,
        #[command(flatten)]
        mixup: MixupArgs,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Barycenter fixed-point iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Batches per class.
        #[arg(long, default_value_t = 5)]
        batches: usize,
    },
    /// Compute HTER, AUC and TPR@FPR=1%.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Bank to score with.
        #[arg(long, group = "model")]
        bank: Option<PathBuf>,
        /// Linear classifier to score with.
        #[arg(long, group = "model")]
        classifier: Option<PathBuf>,
        /// Table to score with `--bank` or `--classifier`.
        #[arg(long, requires = "model")]
        features: Option<PathBuf>,
        /// Precomputed `id,score,label` CSV.
        #[arg(long, conflicts_with_all = ["bank", "classifier", "features"])]
        scores: Option<PathBuf>,
    },
    /// Leave-one-domain-out sweep over shots, methods and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated shot counts.
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<usize>>,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated method names.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        mixup: MixupArgs,
    },
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub support: SupportArgs,
    /// OT regularization (free, one-class) or barycenter regularization (light).
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub mixup: MixupArgs,
    /// Also write each class's transport plan as `plan_<class>.csv`.
    #[arg(long = "dump-plans")]
    pub dump_plans: bool,
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    // a pool that already exists (e.g. in tests) keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth {
            common,
            domains,
            dim,
            per_domain,
            clusters,
            angle,
            shift,
            noise,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.synth.domains, domains);
            set(&mut cfg.synth.dimension, dim);
            set(&mut cfg.synth.per_domain, per_domain);
            set(&mut cfg.synth.clusters_per_class, clusters);
            set(&mut cfg.synth.angle, angle);
            set(&mut cfg.synth.shift, shift);
            set(&mut cfg.synth.noise, noise);
            finish_config(&mut cfg, &common, "synth")?;
            for (d, set) in synth_multidomain(&cfg.synth)?.iter().enumerate() {
                save_feature_table(set, common.out.join(format!("domain{d}.feat")))?;
            }
            Ok(())
        }
        Command::Train {
            common,
            inputs,
            k,
            epochs,
            lr,
            batch_size,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.train.k, k);
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.lr, lr);
            set(&mut cfg.train.batch_size, batch_size);
            let sources = inputs
                .iter()
                .map(|p| load_table(p))
                .collect::<CliResult<Vec<_>>>()?;
            finish_config(&mut cfg, &common, "train")?;
            let outcome = train_prototypes(&sources, &cfg.train)?;
            save_prototype_bank(&outcome.bank, common.out.join("bank.txt"))?;
            write_atomic(&common.out.join("train_history.csv"), &outcome.history_csv())
        }
        Command::Adapt { mode, args } => adapt(mode, args),
        Command::AdaptFree { args } => adapt(AdaptMode::Free, args),
        Command::AdaptLight { args } => adapt(AdaptMode::Light, args),
        Command::MixupDump {
            common,
            support,
            mixup,
            epsilon,
            iterations,
            batches,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.light.barycenter.epsilon, epsilon);
            set(&mut cfg.light.barycenter.iterations, iterations);
            apply_mixup(&mut cfg, &mixup);
            set(&mut cfg.shots, support.shots);
            let (bank, sup) = load_support(&support, &cfg, &common.out)?;
            finish_config(&mut cfg, &common, "mixup-dump")?;
            let mut rng = stream(cfg.seed, "mixup-dump");
            let mut records = Vec::new();
            for b in 0..batches {
                for label in Label::BOTH {
                    let batch = sample_mixup_batch(&bank, &sup, label, &cfg.light.barycenter, &mut rng)?;
                    for (q, row) in batch.points.rows().into_iter().enumerate() {
                        records.push(FeatureRecord::new(
                            format!("b{b}-{}-{q}", label.index()),
                            format!("w={:.6}", batch.w),
                            label,
                            if label == Label::Spoof { "mixup" } else { "" },
                            row.to_vec(),
                        )?);
                    }
                }
            }
            save_feature_table(&FeatureSet::new(bank.dimension(), records)?, common.out.join("mixup.feat"))?;
            Ok(())
        }
        Command::Eval {
            common,
            bank,
            classifier,
            features,
            scores,
        } => {
            let mut cfg = base_config(&common)?;
            let set = match (scores, features) {
                (Some(path), _) => input(read_scores(&path))?,
                (None, Some(features)) => {
                    let table = load_table(&features)?;
                    let scorer: Box<dyn Scorer> = match (bank, classifier) {
                        (Some(b), _) => Box::new(input(load_prototype_bank(b))?),
                        (None, Some(c)) => Box::new(input(load_linear_classifier(c))?),
                        (None, None) => return Err(CliError::Usage("--features needs --bank or --classifier".into())),
                    };
                    score_set(scorer.as_ref(), &table)?
                }
                (None, None) => return Err(CliError::Usage("give --scores, or --features with a model".into())),
            };
            finish_config(&mut cfg, &common, "eval")?;
            let report = MetricReport::compute(&set)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_atomic(&common.out.join("report.json"), &json)?;
            write_atomic(&common.out.join("roc.csv"), &roc_csv(&roc_points(&set)?))?;
            println!("{json}");
            Ok(())
        }
        Command::Sweep {
            common,
            shots,
            seeds,
            methods,
            epsilon,
            lambda,
            k,
            iterations,
            lr,
            mixup,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.sweep_shots, shots);
            set(&mut cfg.sweep_seeds, seeds);
            if let Some(names) = methods {
                cfg.methods = names
                    .iter()
                    .map(|n| n.parse::<Method>())
                    .collect::<crate::Result<Vec<_>>>()?;
            }
            set(&mut cfg.ot.epsilon, epsilon);
            set(&mut cfg.light.barycenter.epsilon, epsilon);
            set(&mut cfg.ot.lambda, lambda);
            set(&mut cfg.train.k, k);
            set(&mut cfg.light.iterations, iterations);
            set(&mut cfg.light.lr, lr);
            apply_mixup(&mut cfg, &mixup);
            if cfg.sweep_shots.is_empty() || cfg.sweep_seeds == 0 || cfg.methods.is_empty() {
                return Err(CliError::Usage("sweep needs at least one shot count, seed and method".into()));
            }
            finish_config(&mut cfg, &common, "sweep")?;
            let seeds: Vec<u64> = (0..cfg.sweep_seeds as u64).map(|i| cfg.seed + i).collect();
            let rows = run_sweep(&cfg.protocol(), &seeds, &cfg.sweep_shots, &cfg.methods)?;
            write_atomic(&common.out.join("sweep.csv"), &sweep_csv(&rows))
        }
    }
}

fn adapt(mode: AdaptMode, args: AdaptArgs) -> CliResult<()> {
    let AdaptArgs {
        common,
        support,
        epsilon,
        lambda,
        iterations,
        lr,
        mixup,
        dump_plans,
    } = args;
    let mut cfg = base_config(&common)?;
    set(&mut cfg.shots, support.shots);
    match mode {
        AdaptMode::Free | AdaptMode::OneClass => {
            set(&mut cfg.ot.epsilon, epsilon);
            set(&mut cfg.ot.lambda, lambda);
        }
        AdaptMode::Light => {
            set(&mut cfg.light.barycenter.epsilon, epsilon);
            set(&mut cfg.light.iterations, iterations);
            set(&mut cfg.light.lr, lr);
            apply_mixup(&mut cfg, &mixup);
        }
    }
    let (bank, sup) = load_support(&support, &cfg, &common.out)?;
    let name = match mode {
        AdaptMode::Free => "adapt-free",
        AdaptMode::Light => "adapt-light",
        AdaptMode::OneClass => "adapt-one-class",
    };
    finish_config(&mut cfg, &common, name)?;
    match mode {
        AdaptMode::Free | AdaptMode::OneClass => {
            let adapted = if mode == AdaptMode::Free {
                adapt_prototypes(&bank, &sup, &cfg.ot)?
            } else {
                adapt_one_class(&bank, &sup, &cfg.ot)?
            };
            save_prototype_bank(&adapted.bank, common.out.join("adapted_bank.txt"))?;
            write_atomic(&common.out.join("diagnostics.json"), &adapted.diagnostics_json())?;
            if dump_plans {
                dump_transport_plans(&adapted, &common.out)?;
            }
            check_converged(&adapted, cfg.strict)
        }
        AdaptMode::Light => {
            let out = train_light(&bank, &sup, &cfg.light)?;
            save_linear_classifier(&out.classifier, common.out.join("classifier.txt"))?;
            write_atomic(&common.out.join("loss.csv"), &out.loss_csv())
        }
    }
}

fn dump_transport_plans(adapted: &AdaptedBank, out: &Path) -> CliResult<()> {
    for c in &adapted.classes {
        if let Some(plan) = &c.plan {
            write_atomic(&out.join(format!("plan_{}.csv", c.label)), &plan.to_csv())?;
        }
    }
    Ok(())
}

fn check_converged(adapted: &AdaptedBank, strict: bool) -> CliResult<()> {
    for c in &adapted.classes {
        if c.converged == Some(false) {
            let msg = format!(
                "{} transport did not converge (marginal violation {:.3e})",
                c.label,
                c.marginal_violation.unwrap_or(f64::NAN)
            );
            if strict {
                return Err(CliError::Runtime(msg));
            }
            log::warn!("{msg}");
        }
    }
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_mixup(cfg: &mut RunConfig, m: &MixupArgs) {
    set(&mut cfg.light.barycenter.beta_a, m.beta_a);
    set(&mut cfg.light.barycenter.beta_b, m.beta_b);
    set(&mut cfg.light.barycenter.sigma, m.sigma);
}

fn base_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    set(&mut cfg.seed, common.seed);
    cfg.strict |= common.strict;
    Ok(cfg)
}

/// Derives seeds, validates, creates the output directory and records the
/// effective settings.
fn finish_config(cfg: &mut RunConfig, common: &Common, name: &str) -> CliResult<()> {
    cfg.derive_seeds();
    cfg.validate()?;
    fs::create_dir_all(&common.out).map_err(|e| CliError::Runtime(format!("{}: {e}", common.out.display())))?;
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    write_atomic(&common.out.join(format!("{name}.config.json")), &json)
}

fn load_table(path: &Path) -> CliResult<FeatureSet> {
    let set = input(load_feature_table(path))?;
    let dev = set.max_norm_deviation();
    if dev > 1e-6 {
        log::warn!("{}: vectors are not unit norm (max deviation {dev:.3e})", path.display());
    }
    Ok(set)
}

fn load_support(args: &SupportArgs, cfg: &RunConfig, out: &Path) -> CliResult<(PrototypeBank, FeatureSet)> {
    let bank = input(load_prototype_bank(&args.bank))?;
    let support = match (&args.support, &args.target) {
        (Some(p), _) => load_table(p)?,
        (None, Some(t)) => {
            let target = load_table(t)?;
            let (support, rest) = split_few_shot(&target, cfg.shots, derive_seed(cfg.seed, "split"))?;
            fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
            save_feature_table(&support, out.join("support.feat"))?;
            save_feature_table(&rest, out.join("eval.feat"))?;
            support
        }
        (None, None) => return Err(CliError::Usage("give --support or --target".into())),
    };
    Ok((bank, support))
}

/// Reads an `id,score,label` CSV; labels are `0` (bona fide) or `1` (spoof).
pub fn read_scores(path: &Path) -> crate::Result<ScoreSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line.starts_with("id,")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(err(i + 1, format!("expected 3 columns, found {}", cols.len())));
        }
        let score: f64 = cols[1]
            .parse()
            .map_err(|_| err(i + 1, format!("invalid score `{}`", cols[1])))?;
        let label = cols[2]
            .parse::<usize>()
            .ok()
            .and_then(Label::from_index)
            .ok_or_else(|| err(i + 1, format!("invalid label `{}`", cols[2])))?;
        scores.push(score);
        labels.push(label);
    }
    ScoreSet::new(scores, labels)
}

/// Writes via a sibling temp file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let fail = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(fail)?;
    f.write_all(contents.as_bytes()).map_err(fail)?;
    f.sync_all().map_err(fail)?;
    fs::rename(&tmp, path).map_err(fail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_is_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 7, "ot": {"lambda": 5.0}}"#).unwrap();
        let common = Common {
            config: Some(path),
            seed: Some(9),
            strict: false,
            out: dir.path().to_path_buf(),
        };
        let cfg = base_config(&common).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.ot.lambda, 5.0);
        assert_eq!(cfg.ot.epsilon, OTConfig::default().epsilon);
    }

    #[test]
    fn bad_config_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, "{not json").unwrap();
        assert_eq!(RunConfig::load(Some(&path)).unwrap_err().exit_code(), EXIT_USAGE);
        assert_eq!(RunConfig::load(Some(&dir.path().join("missing.json"))).unwrap_err().exit_code(), EXIT_USAGE);
    }

    #[test]
    fn scores_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "id,score,label\na,0.9,0\nb,0.1,1\n").unwrap();
        let s = read_scores(&path).unwrap();
        assert_eq!(s.scores(), &[0.9, 0.1]);
        assert_eq!(s.labels(), &[Label::BonaFide, Label::Spoof]);
        fs::write(&path, "id,score,label\na,0.9,2\n").unwrap();
        assert!(read_scores(&path).is_err());
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_atomic(&path, "one").unwrap();
        write_atomic(&path, "two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["protoadapt", "frobnicate"]), EXIT_USAGE);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(main_with_args(["protoadapt", "synth", "--domains", "0", "--out", out]), EXIT_USAGE);
        assert_eq!(main_with_args(["protoadapt", "train", "--input", "/no/such/file", "--out", out]), EXIT_USAGE);
    }
}
