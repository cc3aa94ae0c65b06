//! Runs the default leave-one-domain-out protocol and prints per-method
//! metrics for each seed plus the mean over seeds.

use std::time::Instant;

use protoadapt::protocol::{mean_metric, run_sweep, Method, ProtocolConfig};

fn main() -> protoadapt::Result<()> {
    env_logger::init();
    let seeds: Vec<u64> = (0..5).collect();
    let shots = 10;
    let config = ProtocolConfig::default();
    let start = Instant::now();
    let rows = run_sweep(&config, &seeds, &[shots], &Method::ALL)?;
    for r in &rows {
        println!(
            "seed {} {:>15}: hter {:.4} auc {:.4} tpr@1% {:.4}",
            r.seed, r.method, r.report.hter, r.report.auc, r.report.tpr_at_fpr1
        );
    }
    println!("mean over {} seeds:", seeds.len());
    for m in Method::ALL {
        println!(
            "{:>15}: hter {:.4} auc {:.4}",
            m,
            mean_metric(&rows, shots, m, |r| r.hter),
            mean_metric(&rows, shots, m, |r| r.auc)
        );
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
