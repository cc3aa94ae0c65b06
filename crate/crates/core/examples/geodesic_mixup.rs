//! Traces a free-support barycenter between two small clouds as the mixing
//! weight goes from the target end to the source end, then draws one
//! Beta-weighted synthetic batch.

use ndarray::array;
use protoadapt::mixup::{free_support_barycenter, sample_mixup_batch, BarycenterConfig};
use protoadapt::feature_store::{FeatureRecord, FeatureSet, Label};
use protoadapt::proto::PrototypeBank;
use protoadapt::rng;

fn main() -> protoadapt::Result<()> {
    let source = array![[1.0, 0.0, 0.0], [0.8, 0.6, 0.0]];
    let target = array![[0.0, 0.0, 1.0], [0.0, 0.6, 0.8], [0.0, 0.8, 0.6]];
    let config = BarycenterConfig::default();
    for w in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let mut r = rng::seeded(1);
        let bary = free_support_barycenter(source.view(), target.view(), w, 3, &config, &mut r)?;
        println!("w {w:.2}:\n{:.3}", bary.points);
    }

    let bank = PrototypeBank::from_unnormalized(source.clone(), array![[0.0, 1.0, 0.0]], 30.0, 0.5)?;
    let rec = |id: &str, label, v: Vec<f64>| {
        FeatureRecord::new(id, "target", label, if label == Label::Spoof { "print" } else { "" }, v)
    };
    let support = FeatureSet::new(
        3,
        vec![
            rec("a", Label::BonaFide, vec![0.0, 0.0, 1.0])?,
            rec("b", Label::BonaFide, vec![0.0, 0.6, 0.8])?,
            rec("c", Label::Spoof, vec![0.0, 0.8, 0.6])?,
        ],
    )?;
    let batch = sample_mixup_batch(&bank, &support, Label::BonaFide, &config, &mut rng::seeded(2))?;
    println!("sampled w {:.3}:\n{:.3}", batch.w, batch.points);
    Ok(())
}
