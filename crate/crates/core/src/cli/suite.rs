//! The oracle suite: closed-form identities, bound audits and the denoiser
//! collapse, each reported as a measured value against a threshold.

use std::fmt;

use ndarray::Array2;
use rand::Rng;

use crate::diffnet::{AdamState, FlowMap, FlowMapModel, LossGraph, NetworkSpec, VelocityField};
use crate::error::Result;
use crate::interpolant::{draw_batch, moments, standard_normal, TimeWeight};
use crate::objectives::{loss_emd, loss_lmd, LossOptions};
use crate::oracle::{
    oracle_flowmap_gaussian, oracle_velocity_gaussian, teacher_flowmap_numeric, wasserstein_bound_check, BoundCheckConfig,
    BoundKind, GaussianFlowMap, GaussianTask, GaussianVelocity, IdentityMap, PerturbedGaussianMap,
};
use crate::worker_rng;

use super::train::{train_flow_map, FlowObjective, TrainSettings};

/// One measured quantity compared against its threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCheck {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl SuiteCheck {
    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        SuiteCheck {
            name: name.into(),
            measured,
            threshold,
            pass: measured <= threshold,
        }
    }
}

impl fmt::Display for SuiteCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured={:.6e} threshold={:.6e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold
        )
    }
}

/// Lagrangian and Eulerian distillation losses at the exact map with the
/// exact velocity.
pub fn zero_at_truth(task: &GaussianTask, samples: usize, seed: u64, opts: &LossOptions) -> Result<Vec<SuiteCheck>> {
    let mut rng = worker_rng(seed, 0);
    let schedule = task.schedule();
    let batch = draw_batch(&schedule, &task.coupling(), TimeWeight::UniformSquare, samples, &mut rng)?;
    let map = GaussianFlowMap::new(task.clone());
    let b = GaussianVelocity::new(task.clone());
    let mut g = LossGraph::new();
    let lmd = loss_lmd(&mut g, &map, &b, &schedule, &batch, opts)?;
    let emd = loss_emd(&mut g, &map, &b, &schedule, &batch, opts)?;
    Ok(vec![
        SuiteCheck::at_most("zero-at-truth lmd", g.scalar(lmd), 1e-10),
        SuiteCheck::at_most("zero-at-truth emd", g.scalar(emd), 1e-10),
    ])
}

/// Pushes base samples through `X_{0,t}` and compares mean and variance
/// with the path marginal, in units of standard errors.
pub fn marginal_consistency(task: &GaussianTask, samples: usize, seed: u64) -> Result<Vec<SuiteCheck>> {
    let mut rng = worker_rng(seed, 0);
    let x0 = standard_normal(samples, task.dim(), &mut rng);
    let n = samples as f64;
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for t in [0.25, 0.5, 0.75, 1.0] {
        let xt = oracle_flowmap_gaussian(task, 0.0, t, x0.view())?;
        let (mean, cov) = moments(&xt);
        for k in 0..task.dim() {
            let sig = task.sigma(k, t);
            worst_mean = worst_mean.max((mean[k] - t * task.mean[k]).abs() / (sig / n.sqrt()));
            let var_se = sig * sig * (2.0 / (n - 1.0)).sqrt();
            worst_var = worst_var.max((cov[[k, k]] - sig * sig).abs() / var_se);
        }
    }
    Ok(vec![
        SuiteCheck::at_most("marginal mean (standard errors)", worst_mean, 3.0),
        SuiteCheck::at_most("marginal variance (standard errors)", worst_var, 3.0),
    ])
}

/// `max ‖X_{t,s}(X_{s,t}(x)) − x‖` over random inputs.
pub fn inverse_identity(task: &GaussianTask, seed: u64) -> Result<SuiteCheck> {
    let mut rng = worker_rng(seed, 0);
    let x = standard_normal(200, task.dim(), &mut rng) * 3.0;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (s, t): (f64, f64) = (rng.random(), rng.random());
        let y = oracle_flowmap_gaussian(task, s, t, x.view())?;
        let back = oracle_flowmap_gaussian(task, t, s, y.view())?;
        for (a, b) in back.rows().into_iter().zip(x.rows()) {
            worst = worst.max((&a - &b).mapv(|v| v * v).sum().sqrt());
        }
    }
    Ok(SuiteCheck::at_most("inverse identity", worst, 1e-12))
}

/// `max |∂_s X + ∇X·b_s|` by central differences on a 20 × 20 × 20 grid of
/// `(s, t, x)` with `x` along the diagonal.
pub fn eulerian_residual(task: &GaussianTask) -> Result<SuiteCheck> {
    let d = task.dim();
    let h = 1e-5;
    let grid = |lo: f64, hi: f64| (0..20).map(move |i| lo + (hi - lo) * i as f64 / 19.0);
    let xs: Vec<f64> = grid(-3.0, 3.0).collect();
    let x = Array2::from_shape_fn((xs.len(), d), |(i, _)| xs[i]);
    let mut worst: f64 = 0.0;
    for s in grid(0.025, 0.975) {
        let b = oracle_velocity_gaussian(task, s, x.view())?;
        for t in grid(0.025, 0.975) {
            let up = oracle_flowmap_gaussian(task, s + h, t, x.view())?;
            let down = oracle_flowmap_gaussian(task, s - h, t, x.view())?;
            let mut residual = (up - down) / (2.0 * h);
            for k in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.column_mut(k).mapv_inplace(|v| v + h);
                xm.column_mut(k).mapv_inplace(|v| v - h);
                let jac_col = (oracle_flowmap_gaussian(task, s, t, xp.view())? - oracle_flowmap_gaussian(task, s, t, xm.view())?)
                    / (2.0 * h);
                for i in 0..x.nrows() {
                    for j in 0..d {
                        residual[[i, j]] += jac_col[[i, j]] * b[[i, k]];
                    }
                }
            }
            worst = worst.max(residual.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
        }
    }
    Ok(SuiteCheck::at_most("eulerian residual (finite differences)", worst, 1e-6))
}

/// RK4 with 10⁴ steps on the exact velocity against the closed-form map.
pub fn numeric_teacher_agreement(task: &GaussianTask, seed: u64) -> Result<SuiteCheck> {
    let mut rng = worker_rng(seed, 0);
    let x = standard_normal(100, task.dim(), &mut rng) * 2.0;
    let b = GaussianVelocity::new(task.clone());
    let mut worst: f64 = 0.0;
    for (s, t) in [(0.0, 1.0), (0.2, 0.9), (0.9, 0.1)] {
        let numeric = teacher_flowmap_numeric(&b, s, t, x.view(), None, 10_000)?;
        let exact = oracle_flowmap_gaussian(task, s, t, x.view())?;
        worst = worst.max((numeric - exact).iter().fold(0.0, |m: f64, v| m.max(v.abs())));
    }
    Ok(SuiteCheck::at_most("rk4 reference vs closed form", worst, 1e-8))
}

/// Bound audit for one map and one bound.
pub fn bound_check<F: FlowMap + ?Sized>(
    task: &GaussianTask,
    map: &F,
    kind: BoundKind,
    label: &str,
    cfg: &BoundCheckConfig,
) -> Result<SuiteCheck> {
    let r = wasserstein_bound_check(task, map, kind, cfg)?;
    let combined = (r.lhs_stderr.powi(2) + (r.constant * r.loss_stderr).powi(2)).sqrt();
    Ok(SuiteCheck {
        name: format!("{} bound, {label} (W2^2 vs bound + 3 se)", kind.name()),
        measured: r.lhs,
        threshold: r.rhs + 3.0 * combined,
        pass: r.holds,
    })
}

/// Both bounds on the exact map, the identity map and `seeds` random
/// perturbations of the exact map.
pub fn bound_audit(
    task: &GaussianTask,
    seeds: usize,
    amplitude: f64,
    samples: usize,
    opts: &LossOptions,
) -> Result<Vec<SuiteCheck>> {
    let cfg = |seed: u64| BoundCheckConfig {
        loss_samples: samples,
        pushforward_samples: samples,
        seed,
        opts: *opts,
        ..Default::default()
    };
    let mut checks = Vec::new();
    for kind in [BoundKind::Lmd, BoundKind::Emd] {
        checks.push(bound_check(task, &GaussianFlowMap::new(task.clone()), kind, "exact map", &cfg(1))?);
        checks.push(bound_check(task, &IdentityMap { dim: task.dim() }, kind, "identity map", &cfg(2))?);
        for seed in 0..seeds as u64 {
            let mut rng = worker_rng(1000 + seed, 0);
            let map = PerturbedGaussianMap::random(task.clone(), amplitude, &mut rng);
            checks.push(bound_check(task, &map, kind, &format!("perturbed map {seed}"), &cfg(100 + seed))?);
        }
    }
    Ok(checks)
}

/// Trains the denoiser objective and measures how far `X̂_{0,1}` has
/// collapsed onto the target mean.
pub fn denoiser_collapse(
    task: &GaussianTask,
    spec: &NetworkSpec,
    settings: &TrainSettings,
    seed: u64,
) -> Result<(FlowMapModel, Vec<SuiteCheck>)> {
    let mut rng = worker_rng(seed, 1);
    let mut model = FlowMapModel::new(task.dim(), 0, spec, &mut rng);
    let mut state = AdamState::new(&model.params);
    train_flow_map(
        &mut model,
        FlowObjective::Denoiser,
        &task.schedule(),
        &task.coupling(),
        settings,
        &LossOptions::default(),
        &mut state,
        &mut |_, _| {},
    )?;
    let x0 = standard_normal(1000, task.dim(), &mut worker_rng(seed, 2));
    let out = model.eval(&[0.0; 1000], &[1.0; 1000], x0.view(), None)?;
    let (mean, cov) = moments(&out);
    let mut std_ratio: f64 = 0.0;
    let mut mean_err: f64 = 0.0;
    for k in 0..task.dim() {
        std_ratio = std_ratio.max(cov[[k, k]].sqrt() / task.std[k]);
        mean_err = mean_err.max((mean[k] - task.mean[k]).abs());
    }
    Ok((
        model,
        vec![
            SuiteCheck::at_most("denoiser one-step output std / target std", std_ratio, 0.05),
            SuiteCheck::at_most("denoiser one-step mean error", mean_err, 0.05),
        ],
    ))
}

/// Root-mean-square error of a velocity model against the exact velocity on
/// the bulk `|x − m_t| ≤ 3σ_t` of the path marginals.
pub fn velocity_rmse<B: VelocityField + ?Sized>(model: &B, task: &GaussianTask, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = worker_rng(seed, 0);
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..20 {
        let t = (i as f64 + 0.5) / 20.0;
        let x = task.sample_marginal(t, samples / 20, &mut rng);
        let pred = model.eval(&vec![t; x.nrows()], x.view(), None)?;
        let exact = oracle_velocity_gaussian(task, t, x.view())?;
        for r in 0..x.nrows() {
            let bulk = (0..task.dim()).all(|k| (x[[r, k]] - t * task.mean[k]).abs() <= 3.0 * task.sigma(k, t));
            if bulk {
                for k in 0..task.dim() {
                    sum += (pred[[r, k]] - exact[[r, k]]).powi(2);
                    count += 1;
                }
            }
        }
    }
    Ok((sum / count.max(1) as f64).sqrt())
}

/// Root-mean-square distance between a one-step map and the exact map on a
/// regular grid over `[−3, 3]^d` (d ≤ 2).
pub fn one_step_l2<F: FlowMap + ?Sized>(map: &F, task: &GaussianTask) -> Result<f64> {
    let d = task.dim();
    let side: usize = if d == 1 { 400 } else { 41 };
    let pts: Vec<f64> = (0..side).map(|i| -3.0 + 6.0 * i as f64 / (side - 1) as f64).collect();
    let n = side.pow(d as u32);
    let x = Array2::from_shape_fn((n, d), |(i, k)| pts[(i / side.pow(k as u32)) % side]);
    let approx = map.eval(&vec![0.0; n], &vec![1.0; n], x.view(), None)?;
    let exact = oracle_flowmap_gaussian(task, 0.0, 1.0, x.view())?;
    Ok(((approx - exact).mapv(|v| v * v).sum() / n as f64).sqrt())
}

/// Every oracle property plus the denoiser training.
pub fn run_oracle_suite(
    task: &GaussianTask,
    opts: &LossOptions,
    samples: usize,
    bound_seeds: usize,
    amplitude: f64,
    denoiser: Option<(&NetworkSpec, &TrainSettings)>,
    seed: u64,
) -> Result<Vec<SuiteCheck>> {
    let mut checks = zero_at_truth(task, samples, seed, opts)?;
    checks.extend(marginal_consistency(task, 100_000, seed)?);
    checks.push(inverse_identity(task, seed)?);
    checks.push(eulerian_residual(task)?);
    checks.push(numeric_teacher_agreement(task, seed)?);
    checks.extend(bound_audit(task, bound_seeds, amplitude, samples, opts)?);
    if let Some((spec, settings)) = denoiser {
        checks.extend(denoiser_collapse(task, spec, settings, seed)?.1);
    }
    Ok(checks)
}
