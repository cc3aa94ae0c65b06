//! Trains the linear classifier on prototypes, shots and geodesic-mixup
//! batches, next to the plain linear probe and instance-wise mixup.

use protoadapt::adapt_light::{train_light, LightTrainConfig};
use protoadapt::eval::{baseline_linear_probe, baseline_manifold_mixup, score_set, MetricReport};
use protoadapt::feature_store::{split_few_shot, synth_multidomain, SynthConfig};
use protoadapt::proto::{train_prototypes, TrainConfig};

fn main() -> protoadapt::Result<()> {
    env_logger::init();
    let domains = synth_multidomain(&SynthConfig::default())?;
    let (target, sources) = domains.split_last().expect("at least one domain");
    let bank = train_prototypes(sources, &TrainConfig::default())?.bank;
    let (support, eval) = split_few_shot(target, 10, 1)?;
    let config = LightTrainConfig::default();

    let light = train_light(&bank, &support, &config)?;
    let losses = &light.loss_history;
    println!("loss {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);
    let probe = baseline_linear_probe(&bank, &support, &config)?;
    let mixup = baseline_manifold_mixup(&bank, &support, &config)?;
    for (name, clf) in [("light", &light.classifier), ("linear-probe", &probe.classifier), ("manifold-mixup", &mixup.classifier)] {
        let r = MetricReport::compute(&score_set(clf, &eval)?)?;
        println!("{name:>14}: hter {:.4} auc {:.4}", r.hter, r.auc);
    }
    Ok(())
}
