use flowmap::interpolant::standard_normal;
use flowmap::metrics::{kl_histogram, teacher_l2, w2_assignment, HistogramGrid, Subsampling, W2Config};
use flowmap::oracle::{oracle_flowmap_gaussian, GaussianFlowMap, GaussianTask};
use flowmap::worker_rng;

#[test]
fn gaussian_kl_matches_closed_form() {
    let n = 1_000_000;
    let p = standard_normal(n, 1, &mut worker_rng(1, 0));
    let q = standard_normal(n, 1, &mut worker_rng(1, 1)) + 0.5;
    let grid = HistogramGrid::square(1, -5.0, 5.5, 200).unwrap();
    let kl = kl_histogram(p.view(), q.view(), &grid).unwrap();
    assert!((kl - 0.125).abs() <= 0.01, "KL {kl}");
}

#[test]
fn unit_shift_has_unit_w2() {
    let p = standard_normal(4096, 2, &mut worker_rng(2, 0));
    let mut q = standard_normal(4096, 2, &mut worker_rng(2, 1));
    q.column_mut(0).mapv_inplace(|v| v + 1.0);
    let est = w2_assignment(p.view(), q.view(), &W2Config::default()).unwrap();
    assert!((est.mean - 1.0).abs() <= 0.15, "W2^2 {} ± {}", est.mean, est.stderr);
}

#[test]
fn shared_subsampling_of_identical_sets_is_exactly_zero() {
    let p = standard_normal(1024, 2, &mut worker_rng(3, 0));
    let cfg = W2Config {
        n: 128,
        repeats: 4,
        subsampling: Subsampling::Shared,
        seed: 5,
    };
    assert_eq!(w2_assignment(p.view(), p.view(), &cfg).unwrap().mean, 0.0);
}

#[test]
fn w2_does_not_depend_on_worker_count() {
    let p = standard_normal(2048, 2, &mut worker_rng(4, 0));
    let q = standard_normal(2048, 2, &mut worker_rng(4, 1)) * 1.5;
    let cfg = W2Config {
        n: 64,
        repeats: 6,
        ..W2Config::default()
    };
    let a = w2_assignment(p.view(), q.view(), &cfg).unwrap();
    flowmap::metrics::set_worker_cap(1);
    let b = w2_assignment(p.view(), q.view(), &cfg).unwrap();
    flowmap::metrics::set_worker_cap(0);
    assert_eq!(a, b);
}

#[test]
fn exact_student_has_zero_teacher_error() {
    let task = GaussianTask::default();
    let x0 = standard_normal(500, 2, &mut worker_rng(5, 0));
    let l2 = teacher_l2(
        &GaussianFlowMap::new(task.clone()),
        |x| oracle_flowmap_gaussian(&task, 0.0, 1.0, x),
        x0.view(),
        None,
    )
    .unwrap();
    assert!(l2 < 1e-20);
}
