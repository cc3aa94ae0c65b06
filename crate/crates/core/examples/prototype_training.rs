//! Generates synthetic domains, trains a prototype bank on all but the last
//! one and reports zero-shot metrics on the held-out domain.

use protoadapt::eval::{score_set, MetricReport};
use protoadapt::feature_store::{synth_multidomain, SynthConfig};
use protoadapt::proto::{train_prototypes, TrainConfig};

fn main() -> protoadapt::Result<()> {
    env_logger::init();
    let domains = synth_multidomain(&SynthConfig::default())?;
    let (target, sources) = domains.split_last().expect("at least one domain");
    let outcome = train_prototypes(sources, &TrainConfig::default())?;
    print!("{}", outcome.history_csv());
    for (i, d) in domains.iter().enumerate() {
        let r = MetricReport::compute(&score_set(&outcome.bank, d)?)?;
        let role = if std::ptr::eq(d, target) { "held out" } else { "source" };
        println!("domain {i} ({role}): hter {:.4} auc {:.4}", r.hter, r.auc);
    }
    Ok(())
}
