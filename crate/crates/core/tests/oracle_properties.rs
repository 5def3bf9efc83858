use flowmap::diffnet::{flow_map_dt, LossGraph};
use flowmap::interpolant::{draw_batch, standard_normal, TimeWeight};
use flowmap::objectives::{loss_emd, loss_lmd, loss_velocity, LossOptions};
use flowmap::oracle::{
    oracle_denoiser_gaussian, oracle_flowmap_gaussian, oracle_velocity_gaussian, teacher_flowmap_numeric, GaussianFlowMap,
    GaussianTask, GaussianVelocity, REFERENCE_RK4_STEPS,
};
use flowmap::worker_rng;
use ndarray::Array2;
use proptest::prelude::*;

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

fn task_strategy() -> impl Strategy<Value = GaussianTask> {
    (prop::collection::vec(-2.0..2.0f64, 2), prop::collection::vec(0.3..2.0f64, 2))
        .prop_map(|(m, s)| GaussianTask::new(m, s).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn semigroup_holds(task in task_strategy(), s in 0.0..1.0f64, t in 0.0..1.0f64, u in 0.0..1.0f64, seed in any::<u64>()) {
        let x = standard_normal(16, 2, &mut worker_rng(seed, 0)) * 2.0;
        let two = oracle_flowmap_gaussian(&task, t, u, oracle_flowmap_gaussian(&task, s, t, x.view()).unwrap().view()).unwrap();
        let one = oracle_flowmap_gaussian(&task, s, u, x.view()).unwrap();
        prop_assert!(max_abs(&(two - one)) < 1e-10);
    }

    #[test]
    fn lagrangian_equation_holds(task in task_strategy(), s in 0.0..1.0f64, t in 0.0..1.0f64, seed in any::<u64>()) {
        let x = standard_normal(16, 2, &mut worker_rng(seed, 0));
        let map = GaussianFlowMap::new(task.clone());
        let (out, dt) = flow_map_dt(&map, s, t, x.view(), None).unwrap();
        let b = oracle_velocity_gaussian(&task, t, out.view()).unwrap();
        prop_assert!(max_abs(&(dt - b)) < 1e-10);
    }

    #[test]
    fn distillation_losses_vanish_at_truth(task in task_strategy(), seed in any::<u64>()) {
        let mut rng = worker_rng(seed, 0);
        let schedule = task.schedule();
        let batch = draw_batch(&schedule, &task.coupling(), TimeWeight::UniformSquare, 256, &mut rng).unwrap();
        let map = GaussianFlowMap::new(task.clone());
        let b = GaussianVelocity::new(task.clone());
        let opts = LossOptions::default();
        let mut g = LossGraph::new();
        let lmd = loss_lmd(&mut g, &map, &b, &schedule, &batch, &opts).unwrap();
        let emd = loss_emd(&mut g, &map, &b, &schedule, &batch, &opts).unwrap();
        prop_assert!(g.scalar(lmd) <= 1e-10 && g.scalar(emd) <= 1e-10);
    }

    #[test]
    fn rk4_reference_matches_closed_form(task in task_strategy(), s in 0.0..1.0f64, t in 0.0..1.0f64, seed in any::<u64>()) {
        let x = standard_normal(8, 2, &mut worker_rng(seed, 0));
        let numeric = teacher_flowmap_numeric(&GaussianVelocity::new(task.clone()), s, t, x.view(), None, REFERENCE_RK4_STEPS).unwrap();
        let exact = oracle_flowmap_gaussian(&task, s, t, x.view()).unwrap();
        prop_assert!(max_abs(&(numeric - exact)) < 1e-8);
    }
}

#[test]
fn denoiser_from_noise_returns_the_mean() {
    let task = GaussianTask::default();
    let x = standard_normal(32, 2, &mut worker_rng(1, 0));
    let out = oracle_denoiser_gaussian(&task, 0.0, 1.0, x.view()).unwrap();
    for row in out.rows() {
        assert!((row[0] - 1.5).abs() < 1e-12 && (row[1] + 0.5).abs() < 1e-12);
    }
}

#[test]
fn velocity_loss_at_truth_is_the_conditional_variance() {
    let task = GaussianTask::default();
    let schedule = task.schedule();
    let coupling = task.coupling();
    let b = GaussianVelocity::new(task.clone());
    for t in [0.2, 0.5, 0.8] {
        let mut batch = draw_batch(&schedule, &coupling, TimeWeight::UniformSquare, 100_000, &mut worker_rng(3, 0)).unwrap();
        batch.t = vec![t; batch.len()];
        let batch = flowmap::interpolant::DrawBatch::from_parts(
            &schedule, batch.s, batch.t, batch.x0, batch.x1, batch.z, None,
        )
        .unwrap();
        let mut g = LossGraph::new();
        let loss = loss_velocity(&mut g, &b, &batch).unwrap();
        let expected = task.conditional_variance(t);
        assert!((g.scalar(loss) - expected).abs() < 0.02 * expected, "t={t}: {} vs {expected}", g.scalar(loss));
    }
}
