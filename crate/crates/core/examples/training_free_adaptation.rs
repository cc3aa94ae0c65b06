//! Transports a trained bank onto ten shots per class from the held-out
//! domain and compares metrics before and after, including the bona-fide-only
//! variant.

use protoadapt::adapt_free::{adapt_one_class, adapt_prototypes};
use protoadapt::eval::{score_set, MetricReport};
use protoadapt::feature_store::{split_few_shot, synth_multidomain, Label, SynthConfig};
use protoadapt::ot::OTConfig;
use protoadapt::proto::{train_prototypes, TrainConfig};

fn main() -> protoadapt::Result<()> {
    env_logger::init();
    let domains = synth_multidomain(&SynthConfig::default())?;
    let (target, sources) = domains.split_last().expect("at least one domain");
    let bank = train_prototypes(sources, &TrainConfig::default())?.bank;
    let (support, eval) = split_few_shot(target, 10, 1)?;
    let ot = OTConfig::default();

    let free = adapt_prototypes(&bank, &support, &ot)?;
    let one_class = adapt_one_class(&bank, &support.of_class(Label::BonaFide), &ot)?;
    println!("{}", free.diagnostics_json());
    for (name, b) in [("zero-shot", &bank), ("free", &free.bank), ("one-class", &one_class.bank)] {
        let r = MetricReport::compute(&score_set(b, &eval)?)?;
        println!("{name:>10}: hter {:.4} auc {:.4} tpr@1% {:.4}", r.hter, r.auc, r.tpr_at_fpr1);
    }
    Ok(())
}
