//! Closed-form Gaussian transport: velocity, flow map and the Wasserstein
//! bound for the exact, identity and a perturbed map.
//!
//! ```text
//! cargo run --release --example gaussian_oracle
//! ```

use flowmap::diffnet::FlowMap;
use flowmap::interpolant::standard_normal;
use flowmap::oracle::{
    oracle_flowmap_gaussian, oracle_velocity_gaussian, wasserstein_bound_check, BoundCheckConfig, BoundKind,
    GaussianFlowMap, GaussianTask, IdentityMap, PerturbedGaussianMap, LipschitzProfile,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> flowmap::Result<()> {
    let task = GaussianTask::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = standard_normal(4, task.dim(), &mut rng);

    println!("velocity at t=0.5:\n{:.4}", oracle_velocity_gaussian(&task, 0.5, x.view())?);

    let direct = oracle_flowmap_gaussian(&task, 0.2, 0.9, x.view())?;
    let mid = oracle_flowmap_gaussian(&task, 0.2, 0.6, x.view())?;
    let composed = oracle_flowmap_gaussian(&task, 0.6, 0.9, mid.view())?;
    println!("semigroup gap X(0.6,0.9)∘X(0.2,0.6) vs X(0.2,0.9): {:.2e}", (&direct - &composed).iter().fold(0.0f64, |m, v| m.max(v.abs())));

    println!("LMD bound constant {:.4}", LipschitzProfile::gaussian(&task).lmd_bound_constant());
    let cfg = BoundCheckConfig::default();
    let exact = GaussianFlowMap::new(task.clone());
    let perturbed = PerturbedGaussianMap::random(task.clone(), 0.1, &mut rng);
    let maps: [(&str, &dyn FlowMap); 3] = [("exact", &exact), ("identity", &IdentityMap { dim: 2 }), ("perturbed", &perturbed)];
    for (name, map) in maps {
        for kind in [BoundKind::Lmd, BoundKind::Emd] {
            let b = wasserstein_bound_check(&task, map, kind, &cfg)?;
            println!(
                "{name:>9} {:>3}: W2²={:.4} ≤ {:.3}·{:.4}={:.4}  {}",
                kind.name(),
                b.lhs,
                b.constant,
                b.loss,
                b.rhs,
                if b.holds { "holds" } else { "VIOLATED" }
            );
        }
    }
    Ok(())
}
