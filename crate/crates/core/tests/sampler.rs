use flowmap::interpolant::standard_normal;
use flowmap::oracle::{oracle_flowmap_gaussian, GaussianFlowMap, GaussianTask, GaussianVelocity};
use flowmap::sampler::{integrate_ode, map_sample, OdeMethod, TimeGrid};
use flowmap::worker_rng;
use ndarray::Array2;

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

#[test]
fn heun_80_tracks_the_exact_flow() {
    let task = GaussianTask::default();
    let x0 = standard_normal(1000, 2, &mut worker_rng(1, 0));
    let grid = TimeGrid::uniform(0.0, 1.0, 80).unwrap();
    let end = integrate_ode(&GaussianVelocity::new(task.clone()), x0.view(), &grid, OdeMethod::Heun, None, false)
        .unwrap()
        .end;
    let exact = oracle_flowmap_gaussian(&task, 0.0, 1.0, x0.view()).unwrap();
    assert!(max_abs(&(end - exact)) <= 1e-3);
}

#[test]
fn rk4_error_falls_at_fourth_order() {
    let task = GaussianTask::new(vec![1.0], vec![0.2]).unwrap();
    let x0 = standard_normal(50, 1, &mut worker_rng(2, 0)) * 2.0;
    let exact = oracle_flowmap_gaussian(&task, 0.0, 1.0, x0.view()).unwrap();
    let err = |steps| {
        let grid = TimeGrid::uniform(0.0, 1.0, steps).unwrap();
        let end = integrate_ode(&GaussianVelocity::new(task.clone()), x0.view(), &grid, OdeMethod::Rk4, None, false)
            .unwrap()
            .end;
        max_abs(&(end - &exact))
    };
    let ratio = err(20) / err(40);
    assert!(ratio > 13.0 && ratio < 19.0, "ratio {ratio}");
}

#[test]
fn multi_step_exact_map_equals_one_step() {
    let task = GaussianTask::default();
    let map = GaussianFlowMap::new(task.clone());
    let x0 = standard_normal(200, 2, &mut worker_rng(3, 0));
    let one = map_sample(&map, x0.view(), &TimeGrid::one_step(), None).unwrap();
    let four = map_sample(&map, x0.view(), &TimeGrid::uniform(0.0, 1.0, 4).unwrap(), None).unwrap();
    assert!(max_abs(&(one - four)) < 1e-12);
}

#[test]
fn reversed_grid_inverts_the_exact_map() {
    let task = GaussianTask::default();
    let map = GaussianFlowMap::new(task.clone());
    let x0 = standard_normal(200, 2, &mut worker_rng(4, 0));
    let grid = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
    let there = map_sample(&map, x0.view(), &grid, None).unwrap();
    let back = map_sample(&map, there.view(), &grid.reversed(), None).unwrap();
    assert!(max_abs(&(back - x0)) < 1e-12);
}
