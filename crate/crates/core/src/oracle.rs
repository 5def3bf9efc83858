//! Ground truths: the Gaussian task in closed form, RK4 reference maps and
//! the Wasserstein bound audit.
//!
//! The Gaussian task uses the linear schedule `I_t = (1 − t)x₀ + t x₁` with
//! `x₀ ~ N(0, I)` and `x₁ ~ N(m, diag σ²)` drawn independently. Every
//! component stays Gaussian with mean `t·m` and variance
//! `(1 − t)² + t²σ²`, so the velocity, flow map and denoiser are all affine
//! in `x`.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::diffnet::{FlowMap, LossGraph, NodeId, TangentSeed, VelocityField};
use crate::error::{check_unit_time, Error, Result};
use crate::interpolant::{draw_batch, standard_normal, Coupling, Density, InterpolantSchedule, TimeWeight};
use crate::metrics::{mean_and_stderr, w2_assignment, Subsampling, W2Config};
use crate::objectives::{emd_residual, lmd_residual, row_square_norms, LossOptions};
use crate::sampler::{integrate_fn, OdeMethod, TimeGrid};

/// Steps used by the RK4 reference tier.
pub const REFERENCE_RK4_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTask {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for GaussianTask {
    fn default() -> Self {
        GaussianTask {
            mean: vec![1.5, -0.5],
            std: vec![0.7, 1.3],
        }
    }
}

impl GaussianTask {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != std.len() {
            return Err(Error::Config("gaussian task mean and std must have equal, nonzero length".into()));
        }
        if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("gaussian task needs finite mean and positive std".into()));
        }
        Ok(GaussianTask { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn schedule(&self) -> InterpolantSchedule {
        InterpolantSchedule::linear()
    }

    pub fn target(&self) -> Density {
        Density::Gaussian {
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }

    pub fn coupling(&self) -> Coupling {
        Coupling::Independent {
            base: Density::StandardNormal { dim: self.dim() },
            target: self.target(),
        }
    }

    /// Path standard deviation `σ_t` of component `k`.
    pub fn sigma(&self, k: usize, t: f64) -> f64 {
        let s2 = self.std[k] * self.std[k];
        ((1.0 - t).powi(2) + t * t * s2).sqrt()
    }

    /// `σ̇_t` of component `k`.
    pub fn sigma_dot(&self, k: usize, t: f64) -> f64 {
        let s2 = self.std[k] * self.std[k];
        (-(1.0 - t) + t * s2) / self.sigma(k, t)
    }

    /// Drift slope `σ̇_t / σ_t` of component `k`.
    pub fn slope(&self, k: usize, t: f64) -> f64 {
        let s2 = self.std[k] * self.std[k];
        (-(1.0 - t) + t * s2) / ((1.0 - t).powi(2) + t * t * s2)
    }

    /// Draws `n` points of the interpolant marginal at time `t`.
    pub fn sample_marginal<R: Rng + ?Sized>(&self, t: f64, n: usize, rng: &mut R) -> Array2<f64> {
        let mut x = standard_normal(n, self.dim(), rng);
        for mut row in x.rows_mut() {
            for k in 0..self.dim() {
                row[k] = t * self.mean[k] + self.sigma(k, t) * row[k];
            }
        }
        x
    }

    /// `𝔼 Var(İ_t | I_t)` summed over components at time `t`.
    pub fn conditional_variance(&self, t: f64) -> f64 {
        // İ = x₁ − x₀ and I_t are jointly Gaussian per component.
        (0..self.dim())
            .map(|k| {
                let s2 = self.std[k] * self.std[k];
                let var_idot = 1.0 + s2;
                let cov = -(1.0 - t) + t * s2;
                let var_i = (1.0 - t).powi(2) + t * t * s2;
                var_idot - cov * cov / var_i
            })
            .sum()
    }
}

fn check_dim(task: &GaussianTask, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != task.dim() {
        return Err(Error::Usage(format!(
            "points have dimension {}, task has {}",
            x.ncols(),
            task.dim()
        )));
    }
    Ok(())
}

/// `b_t(x) = m + (σ̇_t/σ_t)(x − t·m)` componentwise.
pub fn oracle_velocity_gaussian(task: &GaussianTask, t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_unit_time("t", t)?;
    check_dim(task, x)?;
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        for k in 0..task.dim() {
            let m = task.mean[k];
            row[k] = m + task.slope(k, t) * (row[k] - t * m);
        }
    }
    Ok(out)
}

/// `X_{s,t}(x) = m_t + (σ_t/σ_s)(x − m_s)` componentwise.
pub fn oracle_flowmap_gaussian(task: &GaussianTask, s: f64, t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    apply_affine(&GaussianFlowMap::new(task.clone()), s, t, x)
}

/// `𝔼[I_t | I_s = x]` componentwise.
pub fn oracle_denoiser_gaussian(task: &GaussianTask, s: f64, t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    apply_affine(&GaussianDenoiserMap::new(task.clone()), s, t, x)
}

fn apply_affine<A: AffineFamily>(family: &A, s: f64, t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_unit_time("s", s)?;
    check_unit_time("t", t)?;
    check_dim(family.task(), x)?;
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        for k in 0..row.len() {
            let c = family.coefficients(k, s, t);
            row[k] = c.slope * row[k] + c.offset;
        }
    }
    Ok(out)
}

/// Componentwise `X_k = slope·x_k + offset` and the partial derivatives of
/// both coefficients in `s` and `t`.
#[derive(Debug, Clone, Copy)]
struct Affine {
    slope: f64,
    offset: f64,
    slope_s: f64,
    offset_s: f64,
    slope_t: f64,
    offset_t: f64,
}

trait AffineFamily {
    fn task(&self) -> &GaussianTask;
    fn coefficients(&self, k: usize, s: f64, t: f64) -> Affine;
}

/// Records an affine family on the graph together with its tangent.
fn affine_on_graph<'a, A: AffineFamily>(
    family: &A,
    g: &mut LossGraph<'a>,
    s: &[f64],
    t: &[f64],
    x: NodeId,
    seed: Option<&TangentSeed>,
) -> Result<(NodeId, Option<NodeId>)> {
    let (rows, d) = g.value(x).dim();
    if s.len() != rows || t.len() != rows {
        return Err(Error::Usage("time vectors must match the batch size".into()));
    }
    for (&s, &t) in s.iter().zip(t) {
        check_unit_time("s", s)?;
        check_unit_time("t", t)?;
    }
    let mut slope = Array2::zeros((rows, d));
    let mut offset = Array2::zeros((rows, d));
    let mut d_slope = Array2::zeros((rows, d));
    let mut d_offset = Array2::zeros((rows, d));
    let (ds, dt) = seed.map_or((0.0, 0.0), |sd| (sd.ds, sd.dt));
    for i in 0..rows {
        for k in 0..d {
            let c = family.coefficients(k, s[i], t[i]);
            slope[[i, k]] = c.slope;
            offset[[i, k]] = c.offset;
            d_slope[[i, k]] = ds * c.slope_s + dt * c.slope_t;
            d_offset[[i, k]] = ds * c.offset_s + dt * c.offset_t;
        }
    }
    let lin = g.mul_const(x, slope.clone());
    let off = g.constant(offset);
    let out = g.add(lin, off);
    let tangent = seed.map(|sd| {
        let lin = g.mul_const(x, d_slope);
        let off = g.constant(d_offset);
        let mut acc = g.add(lin, off);
        if let Some(dx) = sd.dx {
            let along = g.mul_const(dx, slope);
            acc = g.add(acc, along);
        }
        acc
    });
    Ok((out, tangent))
}

/// The exact velocity `b_t` as a graph-compatible field.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVelocity {
    pub task: GaussianTask,
}

impl GaussianVelocity {
    pub fn new(task: GaussianTask) -> Self {
        GaussianVelocity { task }
    }
}

impl VelocityField for GaussianVelocity {
    fn dim(&self) -> usize {
        self.task.dim()
    }

    fn apply<'a>(&'a self, g: &mut LossGraph<'a>, t: &[f64], x: NodeId, _labels: Option<&[usize]>) -> Result<NodeId> {
        let (rows, d) = g.value(x).dim();
        if t.len() != rows {
            return Err(Error::Usage("time vector must match the batch size".into()));
        }
        let mut slope = Array2::zeros((rows, d));
        let mut offset = Array2::zeros((rows, d));
        for (i, &ti) in t.iter().enumerate() {
            check_unit_time("t", ti)?;
            for k in 0..d {
                let c = self.task.slope(k, ti);
                slope[[i, k]] = c;
                offset[[i, k]] = self.task.mean[k] * (1.0 - c * ti);
            }
        }
        let lin = g.mul_const(x, slope);
        let off = g.constant(offset);
        Ok(g.add(lin, off))
    }
}

/// The exact flow map `X_{s,t}` as a graph-compatible map.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFlowMap {
    pub task: GaussianTask,
}

impl GaussianFlowMap {
    pub fn new(task: GaussianTask) -> Self {
        GaussianFlowMap { task }
    }
}

impl AffineFamily for GaussianFlowMap {
    fn task(&self) -> &GaussianTask {
        &self.task
    }

    fn coefficients(&self, k: usize, s: f64, t: f64) -> Affine {
        let task = &self.task;
        let m = task.mean[k];
        let (sig_s, sig_t) = (task.sigma(k, s), task.sigma(k, t));
        let slope = sig_t / sig_s;
        let slope_t = task.sigma_dot(k, t) / sig_s;
        let slope_s = -sig_t * task.sigma_dot(k, s) / (sig_s * sig_s);
        Affine {
            slope,
            offset: t * m - slope * s * m,
            slope_s,
            offset_s: -slope_s * s * m - slope * m,
            slope_t,
            offset_t: m - slope_t * s * m,
        }
    }
}

impl FlowMap for GaussianFlowMap {
    fn dim(&self) -> usize {
        self.task.dim()
    }

    fn apply<'a>(
        &'a self,
        g: &mut LossGraph<'a>,
        s: &[f64],
        t: &[f64],
        x: NodeId,
        _labels: Option<&[usize]>,
        seed: Option<&TangentSeed>,
    ) -> Result<(NodeId, Option<NodeId>)> {
        affine_on_graph(self, g, s, t, x, seed)
    }
}

/// `𝔼[I_t | I_s = x]` as a two-time map.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDenoiserMap {
    pub task: GaussianTask,
}

impl GaussianDenoiserMap {
    pub fn new(task: GaussianTask) -> Self {
        GaussianDenoiserMap { task }
    }
}

impl AffineFamily for GaussianDenoiserMap {
    fn task(&self) -> &GaussianTask {
        &self.task
    }

    fn coefficients(&self, k: usize, s: f64, t: f64) -> Affine {
        let m = self.task.mean[k];
        let s2 = self.task.std[k] * self.task.std[k];
        let var_s = (1.0 - s).powi(2) + s * s * s2;
        let cov = (1.0 - t) * (1.0 - s) + t * s * s2;
        let slope = cov / var_s;
        let slope_t = (-(1.0 - s) + s * s2) / var_s;
        let cov_s = -(1.0 - t) + t * s2;
        let var_s_s = 2.0 * (-(1.0 - s) + s * s2);
        let slope_s = (cov_s * var_s - cov * var_s_s) / (var_s * var_s);
        Affine {
            slope,
            offset: t * m - slope * s * m,
            slope_s,
            offset_s: -slope_s * s * m - slope * m,
            slope_t,
            offset_t: m - slope_t * s * m,
        }
    }
}

impl FlowMap for GaussianDenoiserMap {
    fn dim(&self) -> usize {
        self.task.dim()
    }

    fn apply<'a>(
        &'a self,
        g: &mut LossGraph<'a>,
        s: &[f64],
        t: &[f64],
        x: NodeId,
        _labels: Option<&[usize]>,
        seed: Option<&TangentSeed>,
    ) -> Result<(NodeId, Option<NodeId>)> {
        affine_on_graph(self, g, s, t, x, seed)
    }
}

/// The exact map plus `amplitude·(t − s)·(A x + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedGaussianMap {
    pub exact: GaussianFlowMap,
    pub matrix: Array2<f64>,
    pub shift: Array1<f64>,
    pub amplitude: f64,
}

impl PerturbedGaussianMap {
    /// Random `A` and `c` with standard normal entries.
    pub fn random<R: Rng + ?Sized>(task: GaussianTask, amplitude: f64, rng: &mut R) -> Self {
        let d = task.dim();
        let matrix = standard_normal(d, d, rng);
        let shift = standard_normal(1, d, rng).row(0).to_owned();
        PerturbedGaussianMap {
            exact: GaussianFlowMap::new(task),
            matrix,
            shift,
            amplitude,
        }
    }
}

impl FlowMap for PerturbedGaussianMap {
    fn dim(&self) -> usize {
        self.exact.dim()
    }

    fn apply<'a>(
        &'a self,
        g: &mut LossGraph<'a>,
        s: &[f64],
        t: &[f64],
        x: NodeId,
        labels: Option<&[usize]>,
        seed: Option<&TangentSeed>,
    ) -> Result<(NodeId, Option<NodeId>)> {
        let (base, base_tan) = self.exact.apply(g, s, t, x, labels, seed)?;
        let rows = s.len();
        let ax = g.matmul_const(x, self.matrix.clone());
        let c = g.constant(Array2::from_shape_fn((rows, self.dim()), |(_, k)| self.shift[k]));
        let dir = g.add(ax, c);
        let gap: Array1<f64> = s.iter().zip(t).map(|(s, t)| self.amplitude * (t - s)).collect();
        let bump = g.row_scale(dir, gap.clone());
        let out = g.add(base, bump);
        let tangent = match (seed, base_tan) {
            (Some(sd), Some(bt)) => {
                let mut acc = bt;
                if sd.dt != sd.ds {
                    let shift = g.scale(dir, self.amplitude * (sd.dt - sd.ds));
                    acc = g.add(acc, shift);
                }
                if let Some(dx) = sd.dx {
                    let adx = g.matmul_const(dx, self.matrix.clone());
                    let scaled = g.row_scale(adx, gap);
                    acc = g.add(acc, scaled);
                }
                Some(acc)
            }
            _ => None,
        };
        Ok((out, tangent))
    }
}

/// The identity map `X_{s,t}(x) = x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityMap {
    pub dim: usize,
}

impl FlowMap for IdentityMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply<'a>(
        &'a self,
        g: &mut LossGraph<'a>,
        _s: &[f64],
        _t: &[f64],
        x: NodeId,
        _labels: Option<&[usize]>,
        seed: Option<&TangentSeed>,
    ) -> Result<(NodeId, Option<NodeId>)> {
        let rows = g.value(x).nrows();
        let tangent = seed.map(|sd| sd.dx.unwrap_or_else(|| g.zeros(rows, self.dim)));
        Ok((x, tangent))
    }
}

/// RK4 solution of `∂_τ y = f(τ, y)` from `s` to `t` on `nsteps` uniform steps.
pub fn teacher_flowmap_fn<F>(f: F, s: f64, t: f64, x: ArrayView2<f64>, nsteps: usize) -> Result<Array2<f64>>
where
    F: FnMut(f64, &Array2<f64>) -> Result<Array2<f64>>,
{
    check_unit_time("s", s)?;
    check_unit_time("t", t)?;
    if nsteps == 0 {
        return Err(Error::Usage("nsteps must be at least 1".into()));
    }
    if s == t {
        return Ok(x.to_owned());
    }
    let grid = TimeGrid::uniform(s, t, nsteps)?;
    Ok(integrate_fn(f, x, &grid, OdeMethod::Rk4, false)?.end)
}

/// RK4 flow map of a velocity field.
pub fn teacher_flowmap_numeric<B: VelocityField + ?Sized>(
    b: &B,
    s: f64,
    t: f64,
    x: ArrayView2<f64>,
    labels: Option<&[usize]>,
    nsteps: usize,
) -> Result<Array2<f64>> {
    let n = x.nrows();
    teacher_flowmap_fn(|tau, y| b.eval(&vec![tau.clamp(0.0, 1.0); n], y.view(), labels), s, t, x, nsteps)
}

/// One-sided Lipschitz profile `C_t` of a drift and `∫₀¹ |C_t| dt`.
pub struct LipschitzProfile {
    constant: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub integral: f64,
}

impl std::fmt::Debug for LipschitzProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LipschitzProfile").field("integral", &self.integral).finish()
    }
}

impl LipschitzProfile {
    /// Integrates `|C_t|` by composite Simpson on `panels` (rounded up to even).
    pub fn from_fn(c: impl Fn(f64) -> f64 + Send + Sync + 'static, panels: usize) -> Self {
        let n = (panels.max(2) + 1) & !1;
        let h = 1.0 / n as f64;
        let mut sum = c(0.0).abs() + c(1.0).abs();
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * c(i as f64 * h).abs();
        }
        LipschitzProfile {
            constant: Box::new(c),
            integral: sum * h / 3.0,
        }
    }

    /// `C_t = max_k σ̇_t/σ_t`, the largest slope of the affine drift.
    pub fn gaussian(task: &GaussianTask) -> Self {
        let task = task.clone();
        Self::from_fn(
            move |t| (0..task.dim()).map(|k| task.slope(k, t)).fold(f64::NEG_INFINITY, f64::max),
            20_000,
        )
    }

    pub fn at(&self, t: f64) -> f64 {
        (self.constant)(t)
    }

    /// `e^{1 + 2∫|C_t|}`.
    pub fn lmd_bound_constant(&self) -> f64 {
        (1.0 + 2.0 * self.integral).exp()
    }
}

/// `e¹`.
pub const EMD_BOUND_CONSTANT: f64 = std::f64::consts::E;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Lmd,
    Emd,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Lmd => "lmd",
            BoundKind::Emd => "emd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheckConfig {
    /// Monte-Carlo samples for the loss.
    pub loss_samples: usize,
    /// Base points pushed through both maps for the `W₂²` estimate.
    pub pushforward_samples: usize,
    pub w2_n: usize,
    pub w2_repeats: usize,
    pub seed: u64,
    pub opts: LossOptions,
}

impl Default for BoundCheckConfig {
    fn default() -> Self {
        BoundCheckConfig {
            loss_samples: 4096,
            pushforward_samples: 4096,
            w2_n: 512,
            w2_repeats: 8,
            seed: 0,
            opts: LossOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub kind: BoundKind,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub loss: f64,
    pub loss_stderr: f64,
    pub constant: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares `W₂²(ρ₁, ρ̂₁)` with the distillation bound for `map`.
///
/// The loss is estimated with `(s, t)` uniform on the unit square. The `W₂²`
/// estimate pushes the same base points through the exact and the candidate
/// map and subsamples both with shared indices.
pub fn wasserstein_bound_check<F: FlowMap + ?Sized>(
    task: &GaussianTask,
    map: &F,
    kind: BoundKind,
    cfg: &BoundCheckConfig,
) -> Result<BoundCheck> {
    let mut rng = crate::worker_rng(cfg.seed, 0);
    let schedule = task.schedule();
    let batch = draw_batch(&schedule, &task.coupling(), TimeWeight::UniformSquare, cfg.loss_samples, &mut rng)?;
    let teacher = GaussianVelocity::new(task.clone());
    let mut g = LossGraph::new();
    let residual = match kind {
        BoundKind::Lmd => lmd_residual(&mut g, map, &teacher, &schedule, &batch, &cfg.opts)?,
        BoundKind::Emd => emd_residual(&mut g, map, &teacher, &schedule, &batch, &cfg.opts)?,
    };
    let per_row = row_square_norms(g.value(residual));
    let (loss, loss_stderr) = mean_and_stderr(&per_row);
    let constant = match kind {
        BoundKind::Lmd => LipschitzProfile::gaussian(task).lmd_bound_constant(),
        BoundKind::Emd => EMD_BOUND_CONSTANT,
    };

    let x0 = standard_normal(cfg.pushforward_samples, task.dim(), &mut rng);
    let n = x0.nrows();
    let exact = oracle_flowmap_gaussian(task, 0.0, 1.0, x0.view())?;
    let approx = map.eval(&vec![0.0; n], &vec![1.0; n], x0.view(), None)?;
    let w2 = w2_assignment(
        exact.view(),
        approx.view(),
        &W2Config {
            n: cfg.w2_n.min(n),
            repeats: cfg.w2_repeats,
            subsampling: Subsampling::Shared,
            seed: cfg.seed.wrapping_add(1),
        },
    )?;
    let rhs = constant * loss;
    let combined = (w2.stderr.powi(2) + (constant * loss_stderr).powi(2)).sqrt();
    Ok(BoundCheck {
        kind,
        lhs: w2.mean,
        lhs_stderr: w2.stderr,
        loss,
        loss_stderr,
        constant,
        rhs,
        holds: w2.mean <= rhs + 3.0 * combined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_d(m: f64, s: f64) -> GaussianTask {
        GaussianTask::new(vec![m], vec![s]).unwrap()
    }

    #[test]
    fn velocity_examples() {
        let task = one_d(0.0, 1.0);
        let b = oracle_velocity_gaussian(&task, 0.5, array![[-2.0], [3.0]].view()).unwrap();
        assert!(b.iter().all(|v| v.abs() < 1e-15));
        let task = GaussianTask::default();
        let x = array![[0.3, -1.2]];
        let b0 = oracle_velocity_gaussian(&task, 0.0, x.view()).unwrap();
        for k in 0..2 {
            assert!((b0[[0, k]] - (task.mean[k] - x[[0, k]])).abs() < 1e-15);
        }
        let at_mean = array![[0.6 * 1.5, 0.6 * -0.5]];
        let b = oracle_velocity_gaussian(&task, 0.6, at_mean.view()).unwrap();
        assert!((b[[0, 0]] - 1.5).abs() < 1e-14 && (b[[0, 1]] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn flow_map_identities() {
        let task = GaussianTask::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = standard_normal(50, 2, &mut rng);
        for _ in 0..20 {
            let (s, t, u): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let same = oracle_flowmap_gaussian(&task, s, s, x.view()).unwrap();
            assert!((&same - &x).iter().all(|v| v.abs() < 1e-14));
            let a = oracle_flowmap_gaussian(&task, s, t, x.view()).unwrap();
            let b = oracle_flowmap_gaussian(&task, t, u, a.view()).unwrap();
            let c = oracle_flowmap_gaussian(&task, s, u, x.view()).unwrap();
            assert!((&b - &c).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn denoiser_collapses_to_mean_in_one_step() {
        let task = GaussianTask::default();
        let x = array![[5.0, -3.0], [0.0, 0.0]];
        let d = oracle_denoiser_gaussian(&task, 0.0, 1.0, x.view()).unwrap();
        for row in d.rows() {
            assert!((row[0] - 1.5).abs() < 1e-15 && (row[1] + 0.5).abs() < 1e-15);
        }
        let same = oracle_denoiser_gaussian(&task, 0.4, 0.4, x.view()).unwrap();
        assert!((&same - &x).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn numeric_teacher_examples() {
        let x = array![[1.0], [-2.0]];
        let same = teacher_flowmap_fn(|_, y| Ok(y * 0.0), 0.0, 1.0, x.view(), 10).unwrap();
        assert_eq!(same, x);
        let grown = teacher_flowmap_fn(|_, y| Ok(y.clone()), 0.0, 1.0, x.view(), 1000).unwrap();
        let e = std::f64::consts::E;
        assert!((grown[[0, 0]] - e).abs() < 1e-9 && (grown[[1, 0]] + 2.0 * e).abs() < 1e-9);
        assert!(teacher_flowmap_fn(|_, y| Ok(y.clone()), 0.0, 1.0, x.view(), 0).is_err());
    }

    #[test]
    fn lipschitz_integral_for_unit_variance() {
        // σ_t² = (1−t)² + t²: ∫|σ̇/σ| = 2·(log σ₀ − log σ_{1/2}) = log 2.
        let p = LipschitzProfile::gaussian(&one_d(0.0, 1.0));
        assert!((p.integral - 2f64.ln()).abs() < 1e-9);
        assert!((p.at(0.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn conditional_variance_at_midpoint() {
        // m = 0, σ = 1, t = 1/2: Var(İ) = 2, Cov = 0.
        assert!((one_d(0.0, 1.0).conditional_variance(0.5) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn identity_map_has_pass_through_tangent() {
        let id = IdentityMap { dim: 2 };
        let mut g = LossGraph::new();
        let x = g.constant(array![[1.0, 2.0]]);
        let dir = g.constant(array![[0.5, -0.5]]);
        let (out, tan) = id.apply(&mut g, &[0.0], &[1.0], x, None, Some(&TangentSeed::along_x(dir))).unwrap();
        assert_eq!(g.value(out), &array![[1.0, 2.0]]);
        assert_eq!(g.value(tan.unwrap()), &array![[0.5, -0.5]]);
    }
}
