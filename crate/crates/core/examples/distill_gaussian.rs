//! Distils the closed-form Gaussian velocity into a one-step flow map with
//! the Lagrangian and Eulerian objectives, then scores each student against
//! the exact map.
//!
//! ```text
//! cargo run --release --example distill_gaussian [steps]
//! ```

use flowmap::cli::train::{train_flow_map, FlowObjective, TrainSettings};
use flowmap::diffnet::{AdamState, FlowMapModel, NetworkSpec};
use flowmap::interpolant::standard_normal;
use flowmap::metrics::teacher_l2;
use flowmap::objectives::LossOptions;
use flowmap::oracle::{oracle_flowmap_gaussian, wasserstein_bound_check, BoundCheckConfig, BoundKind, GaussianTask, GaussianVelocity};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> flowmap::Result<()> {
    let steps = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3000);
    let task = GaussianTask::default();
    let teacher = GaussianVelocity::new(task.clone());
    let spec = NetworkSpec { hidden: vec![64, 64], ..NetworkSpec::default() };
    let x0 = standard_normal(4096, task.dim(), &mut ChaCha8Rng::seed_from_u64(99));

    for (kind, objective) in [(BoundKind::Lmd, FlowObjective::Lmd(&teacher)), (BoundKind::Emd, FlowObjective::Emd(&teacher))] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut student = FlowMapModel::new(task.dim(), 0, &spec, &mut rng);
        let mut state = AdamState::new(&student.params);
        let settings = TrainSettings { steps, seed: 2, ..TrainSettings::default() };
        let log = train_flow_map(
            &mut student,
            objective,
            &task.schedule(),
            &task.coupling(),
            &settings,
            &LossOptions::default(),
            &mut state,
            &mut |_, _| {},
        )?;
        let final_loss = log.entries.last().map_or(f64::NAN, |e| e.1);
        let l2 = teacher_l2(&student, |x| oracle_flowmap_gaussian(&task, 0.0, 1.0, x), x0.view(), None)?;
        let bound = wasserstein_bound_check(&task, &student, kind, &BoundCheckConfig::default())?;
        println!(
            "{}: final loss {final_loss:.5}, one-step L2 to exact map {l2:.5}, W2² {:.5} vs bound {:.5}",
            objective.name(),
            bound.lhs,
            bound.rhs
        );
    }
    Ok(())
}
