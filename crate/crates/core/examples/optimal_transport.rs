//! Entropic Sinkhorn against the exact solver on a small problem, then the
//! Laplacian-regularized plan between two point clouds.

use ndarray::array;
use protoadapt::ot::{
    cost_sqeuclidean, exact_ot_small, laplacian_reg_ot, sinkhorn, uniform_weights, CostMatrix, OTConfig,
};

fn main() -> protoadapt::Result<()> {
    let cost = CostMatrix::from_array(array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]])?;
    let a = [0.5, 0.3, 0.2];
    let b = [0.2, 0.3, 0.5];
    let exact = exact_ot_small(&cost, &a, &b)?;
    println!("exact cost {:.6}", exact.cost(&cost));
    for eps in [1.0, 0.1, 0.01] {
        let plan = sinkhorn(&cost, &a, &b, eps, 10_000, 1e-9)?;
        println!(
            "sinkhorn eps {eps:<5} cost {:.6} violation {:.1e} sweeps {}",
            plan.cost(&cost),
            plan.marginal_violation,
            plan.iterations
        );
    }

    let xs = array![[0.0, 0.0], [0.1, 0.0], [1.0, 0.0], [1.1, 0.0]];
    let xt = array![[0.0, 1.0], [0.1, 1.0], [1.0, 1.0], [1.1, 1.0]];
    let c = cost_sqeuclidean(xs.view(), xt.view())?;
    let w = uniform_weights(4).to_vec();
    let config = OTConfig {
        k_nn: 1,
        ..Default::default()
    };
    let sol = laplacian_reg_ot(&c, &w, &w, xs.view(), xt.view(), &config)?;
    println!("laplacian objective trace {:?}", sol.objective_trace);
    println!("plan:\n{:.3}", sol.plan.gamma());
    Ok(())
}
