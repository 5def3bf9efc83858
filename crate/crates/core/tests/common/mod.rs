//! Helpers shared by the integration tests: random models and
//! finite-difference reference derivatives.
#![allow(dead_code)]

use flowmap::diffnet::{
    flow_map_ds, flow_map_dt, flow_map_jvp_x, Activation, FlowMap, FlowMapModel, LossGraph, MlpParams, NetworkSpec,
    TangentSeed, TimeEmbedding, VelocityModel,
};
use flowmap::interpolant::{standard_normal, DrawBatch, InterpolantSchedule};
use flowmap::objectives::{
    loss_denoiser, loss_emd, loss_fmm, loss_lmd, loss_pfmm, loss_velocity, LossOptions,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative Frobenius error `‖a − b‖ / ‖b‖`.
pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = b.mapv(|v| v * v).sum().sqrt();
    diff / scale.max(1e-300)
}

/// Fourth-order central difference of `f` at 0.
pub fn five_point<F: FnMut(f64) -> Array2<f64>>(mut f: F, h: f64) -> Array2<f64> {
    let (p1, m1, p2, m2) = (f(h), f(-h), f(2.0 * h), f(-2.0 * h));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

/// Scalar version of [`five_point`].
pub fn five_point_scalar<F: FnMut(f64) -> f64>(mut f: F, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

/// A random architecture drawn from the ranges the library supports.
pub fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let depth = rng.random_range(1..=3);
    let activation = [Activation::Gelu, Activation::Silu, Activation::Tanh][rng.random_range(0..3)];
    NetworkSpec {
        hidden: (0..depth).map(|_| rng.random_range(4..=16)).collect(),
        activation,
        embedding: TimeEmbedding {
            frequencies: rng.random_range(1..=8),
        },
    }
}

fn randomize_last(params: &mut MlpParams, rng: &mut ChaCha8Rng) {
    let last = params.layers.len() - 1;
    let (i, o) = (params.layers[last].input_dim(), params.layers[last].output_dim());
    params.layers[last] = MlpParams::init(&[i, o], params.activation, rng).layers[0].clone();
    for b in params.layers[last].bias.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
}

/// Flow map with a non-zero output layer.
pub fn random_flow_map(dim: usize, labels: usize, spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> FlowMapModel {
    let mut m = FlowMapModel::new(dim, labels, spec, rng);
    randomize_last(&mut m.params, rng);
    m
}

pub fn random_velocity(dim: usize, labels: usize, spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> VelocityModel {
    let mut m = VelocityModel::new(dim, labels, spec, rng);
    randomize_last(&mut m.params, rng);
    m
}

/// One random configuration for the derivative checks.
pub struct Config {
    pub dim: usize,
    pub labels: Option<Vec<usize>>,
    pub map: FlowMapModel,
    pub s: f64,
    pub t: f64,
    pub x: Array2<f64>,
}

pub fn random_config(seed: u64) -> Config {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=3);
    let label_count = [0, 2, 3][rng.random_range(0..3)];
    let spec = random_spec(&mut rng);
    let map = random_flow_map(dim, label_count, &spec, &mut rng);
    let n = 6;
    let labels = (label_count > 0).then(|| (0..n).map(|_| rng.random_range(0..label_count)).collect());
    Config {
        dim,
        labels,
        map,
        s: rng.random_range(0.01..0.99),
        t: rng.random_range(0.01..0.99),
        x: standard_normal(n, dim, &mut rng),
    }
}

/// Relative errors of `∂_t`, `∂_s` and the spatial JVP against five-point
/// differences.
pub fn tangent_errors(c: &Config) -> [f64; 3] {
    let labels = c.labels.as_deref();
    let h = 1e-5;
    let eval = |s: f64, t: f64, x: &Array2<f64>| c.map.eval(&vec![s; x.nrows()], &vec![t; x.nrows()], x.view(), labels).unwrap();
    let (_, dt) = flow_map_dt(&c.map, c.s, c.t, c.x.view(), labels).unwrap();
    let (_, ds) = flow_map_ds(&c.map, c.s, c.t, c.x.view(), labels).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(c.x.len() as u64);
    let dir = standard_normal(c.x.nrows(), c.dim, &mut rng);
    let (_, jvp) = flow_map_jvp_x(&c.map, c.s, c.t, c.x.view(), dir.view(), labels).unwrap();
    let fd_t = five_point(|e| eval(c.s, c.t + e, &c.x), h);
    let fd_s = five_point(|e| eval(c.s + e, c.t, &c.x), h);
    let fd_x = five_point(|e| eval(c.s, c.t, &(&c.x + &(&dir * e))), 1e-4);
    [rel_err(&dt, &fd_t), rel_err(&ds, &fd_s), rel_err(&jvp, &fd_x)]
}

pub const LOSS_KINDS: [&str; 7] = ["velocity", "lmd", "emd", "fmm", "pfmm", "ee", "denoiser"];

/// Relative error between the tape's directional parameter derivative and a
/// five-point difference of the loss, for one loss kind.
pub fn param_grad_error(kind: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=2);
    let spec = random_spec(&mut rng);
    let schedule = [InterpolantSchedule::linear(), InterpolantSchedule::trig()][rng.random_range(0..2)].clone();
    let m = 8;
    let s: Vec<f64> = (0..m).map(|_| rng.random_range(0.02..0.98)).collect();
    let t: Vec<f64> = (0..m).map(|_| rng.random_range(0.02..0.98)).collect();
    let x0 = standard_normal(m, dim, &mut rng);
    let x1 = standard_normal(m, dim, &mut rng) * 2.0;
    let z = standard_normal(m, dim, &mut rng);
    let batch = DrawBatch::from_parts(&schedule, s, t, x0, x1, z, None).unwrap();
    let opts = LossOptions::default();
    let teacher_b = random_velocity(dim, 0, &spec, &mut rng);
    let teacher_map = random_flow_map(dim, 0, &spec, &mut rng);

    if kind == "velocity" {
        let model = random_velocity(dim, 0, &spec, &mut rng);
        let loss_at = |p: &MlpParams| {
            let mm = VelocityModel { params: p.clone(), ..model.clone() };
            let mut g = LossGraph::new();
            let root = loss_velocity(&mut g, &mm, &batch).unwrap();
            g.scalar(root)
        };
        let grad = {
            let mut g = LossGraph::new();
            g.bind(&model.params);
            let root = loss_velocity(&mut g, &model, &batch).unwrap();
            g.param_grad(root, &model.params).unwrap()
        };
        return directional(&model.params, &grad, loss_at, &mut rng);
    }

    let model = random_flow_map(dim, 0, &spec, &mut rng);
    let loss_with = |mm: &FlowMapModel, bind: bool| -> (f64, Option<MlpParams>) {
        let mut g = LossGraph::new();
        if bind {
            g.bind(&mm.params);
        }
        let root = match kind {
            "lmd" => loss_lmd(&mut g, mm, &teacher_b, &schedule, &batch, &opts),
            "emd" => loss_emd(&mut g, mm, &teacher_b, &schedule, &batch, &opts),
            "fmm" => loss_fmm(&mut g, mm, &batch, &opts),
            "pfmm" => loss_pfmm(&mut g, mm, &teacher_map, 3, &schedule, &batch),
            "denoiser" => loss_denoiser(&mut g, mm, &schedule, &batch, &opts),
            other => panic!("no direct loss for {other}"),
        }
        .unwrap();
        let grad = bind.then(|| g.param_grad(root, &mm.params).unwrap());
        (g.scalar(root), grad)
    };
    if kind == "ee" {
        return ee_grad_error(&model, &schedule, &batch, &mut rng);
    }
    let (_, grad) = loss_with(&model, true);
    let loss_at = |p: &MlpParams| loss_with(&FlowMapModel { params: p.clone(), ..model.clone() }, false).0;
    directional(&model.params, &grad.unwrap(), loss_at, &mut rng)
}

fn directional<L: Fn(&MlpParams) -> f64>(params: &MlpParams, grad: &MlpParams, loss_at: L, rng: &mut ChaCha8Rng) -> f64 {
    let mut dir = params.zeros_like();
    for v in dir.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let scale = 1.0 / dir.norm();
    let mut unit = params.zeros_like();
    unit.axpy(scale, &dir);
    let analytic = grad.dot(&unit);
    let fd = five_point_scalar(
        |e| {
            let mut p = params.clone();
            p.axpy(e, &unit);
            loss_at(&p)
        },
        1e-4,
    );
    (analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-12)
}

/// The Eulerian estimation loss keeps its spatial term frozen, so the
/// reference difference perturbs only the `∂_s` branch.
fn ee_grad_error(model: &FlowMapModel, schedule: &InterpolantSchedule, batch: &DrawBatch, rng: &mut ChaCha8Rng) -> f64 {
    let (i_s, idot_s) = batch.at_s(schedule).unwrap();
    let frozen_jvp = {
        let mut g = LossGraph::new();
        let x = g.constant(i_s.clone());
        let dir = g.constant(idot_s.clone());
        let (_, j) = model.apply(&mut g, &batch.s, &batch.t, x, None, Some(&TangentSeed::along_x(dir))).unwrap();
        g.value(j.unwrap()).clone()
    };
    let loss_at = |p: &MlpParams| {
        let mm = FlowMapModel { params: p.clone(), ..model.clone() };
        let mut g = LossGraph::new();
        let x = g.constant(i_s.clone());
        let (_, ds) = mm.apply(&mut g, &batch.s, &batch.t, x, None, Some(&TangentSeed::d_s())).unwrap();
        let r = g.value(ds.unwrap()) + &frozen_jvp;
        r.mapv(|v| v * v).sum() / r.nrows() as f64
    };
    let grad = {
        let mut g = LossGraph::new();
        g.bind(&model.params);
        let root = flowmap::objectives::loss_ee(&mut g, model, schedule, batch).unwrap();
        g.param_grad(root, &model.params).unwrap()
    };
    directional(&model.params, &grad, loss_at, rng)
}
