use flowmap::cli::train::{train_flow_map, FlowObjective, TrainSettings};
use flowmap::diffnet::{AdamState, FlowMapModel, LossGraph, NetworkSpec};
use flowmap::interpolant::{draw_batch, DrawBatch, TimeWeight};
use flowmap::objectives::{loss_emd, loss_fmm, loss_fmm_terms, loss_pfmm, LossOptions};
use flowmap::oracle::{GaussianFlowMap, GaussianTask, GaussianVelocity};
use flowmap::{worker_rng, Error};

fn small_model(seed: u64) -> FlowMapModel {
    let spec = NetworkSpec {
        hidden: vec![16, 16],
        ..NetworkSpec::default()
    };
    FlowMapModel::new(2, 0, &spec, &mut worker_rng(seed, 0))
}

fn batch(task: &GaussianTask, weight: TimeWeight, m: usize) -> DrawBatch {
    draw_batch(&task.schedule(), &task.coupling(), weight, m, &mut worker_rng(9, 0)).unwrap()
}

#[test]
fn identity_map_fmm_loss_is_mean_square_velocity_target() {
    let task = GaussianTask::default();
    let b = batch(&task, TimeWeight::UniformSquare, 512);
    let model = small_model(1);
    let mut g = LossGraph::new();
    let terms = loss_fmm_terms(&mut g, &model, &b, &LossOptions::default()).unwrap();
    let expected = b.idot_t.mapv(|v| v * v).sum() / 512.0;
    assert!((g.scalar(terms.total) - expected).abs() < 1e-12 * expected.max(1.0));
}

#[test]
fn pfmm_with_equal_times_and_self_teacher_is_zero() {
    let task = GaussianTask::default();
    let mut b = batch(&task, TimeWeight::UniformSquare, 64);
    b.t = b.s.clone();
    let model = small_model(2);
    let mut g = LossGraph::new();
    let loss = loss_pfmm(&mut g, &model, &model, 2, &task.schedule(), &b).unwrap();
    assert_eq!(g.scalar(loss), 0.0);
}

#[test]
fn flipped_eulerian_direction_breaks_zero_at_truth() {
    let task = GaussianTask::default();
    let b = batch(&task, TimeWeight::UniformSquare, 512);
    let map = GaussianFlowMap::new(task.clone());
    let teacher = GaussianVelocity::new(task.clone());
    let opts = LossOptions {
        flip_emd_direction: true,
        ..LossOptions::default()
    };
    let mut g = LossGraph::new();
    let loss = loss_emd(&mut g, &map, &teacher, &task.schedule(), &b, &opts).unwrap();
    assert!(g.scalar(loss) > 0.1);
}

#[test]
fn exact_map_fmm_loss_is_the_velocity_noise_floor() {
    let task = GaussianTask::default();
    let b = batch(&task, TimeWeight::UniformSquare, 20_000);
    let map = GaussianFlowMap::new(task.clone());
    let mut g = LossGraph::new();
    let loss = loss_fmm(&mut g, &map, &b, &LossOptions::default()).unwrap();
    let floor: f64 = (0..50).map(|i| task.conditional_variance((i as f64 + 0.5) / 50.0)).sum::<f64>() / 50.0;
    assert!((g.scalar(loss) - floor).abs() < 0.05 * floor, "{} vs {floor}", g.scalar(loss));
}

#[test]
fn fmm_training_rejects_asymmetric_weights() {
    let task = GaussianTask::default();
    let mut model = small_model(3);
    let mut state = AdamState::new(&model.params);
    let settings = TrainSettings {
        steps: 1,
        weight: TimeWeight::ForwardOnly,
        ..TrainSettings::default()
    };
    let err = train_flow_map(
        &mut model,
        FlowObjective::Fmm,
        &task.schedule(),
        &task.coupling(),
        &settings,
        &LossOptions::default(),
        &mut state,
        &mut |_, _| {},
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn fmm_training_lowers_the_loss_on_the_gaussian_task() {
    let task = GaussianTask::default();
    let mut model = small_model(4);
    let mut state = AdamState::new(&model.params);
    let settings = TrainSettings {
        steps: 600,
        batch_size: 128,
        log_every: 50,
        ..TrainSettings::default()
    };
    let log = train_flow_map(
        &mut model,
        FlowObjective::Fmm,
        &task.schedule(),
        &task.coupling(),
        &settings,
        &LossOptions::default(),
        &mut state,
        &mut |_, _| {},
    )
    .unwrap();
    let (head, tail) = log.head_tail_means(0.1).unwrap();
    assert!(tail < head, "{head} -> {tail}");
}
