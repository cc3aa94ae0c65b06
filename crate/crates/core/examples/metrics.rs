//! Metrics on a small hand-made score set.

use protoadapt::eval::{roc_csv, roc_points, MetricReport, ScoreSet};
use protoadapt::feature_store::Label;

fn main() -> protoadapt::Result<()> {
    let scores = vec![0.9, 0.8, 0.7, 0.6, 0.55, 0.4, 0.3, 0.2];
    let labels = [0, 0, 1, 0, 1, 1, 0, 1]
        .iter()
        .map(|&i| Label::from_index(i).expect("0 or 1"))
        .collect();
    let set = ScoreSet::new(scores, labels)?;
    println!("{}", serde_json::to_string_pretty(&MetricReport::compute(&set)?).expect("serializes"));
    print!("{}", roc_csv(&roc_points(&set)?));
    Ok(())
}
