//! Interpolant schedules, couplings and the samplers that produce the
//! `(s, t, I, İ)` tuples every training objective consumes.
//!
//! A stochastic interpolant is the path `I_t = α_t x₀ + β_t x₁ + γ_t z` with
//! `(x₀, x₁)` drawn from a coupling and `z` standard normal. Its time
//! derivative `İ_t = α̇_t x₀ + β̇_t x₁ + γ̇_t z` is the regression target for the
//! velocity field, and the path itself supplies the evaluation points for the
//! flow-map losses.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_unit_time, Error, Result};

/// The six schedule values at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha_dot: f64,
    pub beta_dot: f64,
    pub gamma_dot: f64,
}

impl Coefficients {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.alpha,
            self.beta,
            self.gamma,
            self.alpha_dot,
            self.beta_dot,
            self.gamma_dot,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    /// `α = 1 − t`, `β = t`, `γ = 0`.
    Linear,
    /// `α = cos(πt/2)`, `β = sin(πt/2)`, `γ = 0`.
    Trig,
    /// `α = 0`, `β = t`, `γ = √(1 − t²)`; the base is the noise itself.
    VpDiffusion,
    /// `α = 0`, `β = 1`, `γ = T − t`.
    VeDiffusion,
    Custom,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Trig => "trig",
            ScheduleKind::VpDiffusion => "vp-diffusion",
            ScheduleKind::VeDiffusion => "ve-diffusion",
            ScheduleKind::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "linear" => ScheduleKind::Linear,
            "trig" => ScheduleKind::Trig,
            "vp-diffusion" => ScheduleKind::VpDiffusion,
            "ve-diffusion" => ScheduleKind::VeDiffusion,
            "custom" => ScheduleKind::Custom,
            other => return Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        })
    }
}

pub type CoefficientFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied closed-form coefficients together with their derivatives.
#[derive(Clone)]
pub struct CustomCoefficients {
    pub alpha: CoefficientFn,
    pub beta: CoefficientFn,
    pub gamma: CoefficientFn,
    pub alpha_dot: CoefficientFn,
    pub beta_dot: CoefficientFn,
    pub gamma_dot: CoefficientFn,
}

/// Tolerance for the schedule-derivative check against finite differences.
pub const DERIVATIVE_REL_TOL: f64 = 1e-6;
/// Step for the schedule-derivative finite differences.
pub const DERIVATIVE_FD_STEP: f64 = 1e-5;
/// Tolerance used for the endpoint conditions.
pub const ENDPOINT_TOL: f64 = 1e-12;

#[derive(Clone)]
pub struct InterpolantSchedule {
    kind: ScheduleKind,
    ve_horizon: f64,
    custom: Option<CustomCoefficients>,
    pinned: bool,
}

impl fmt::Debug for InterpolantSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InterpolantSchedule")
            .field("kind", &self.kind)
            .field("ve_horizon", &self.ve_horizon)
            .finish()
    }
}

/// Default horizon `T` of the variance-exploding schedule.
pub const DEFAULT_VE_HORIZON: f64 = 80.0;

impl InterpolantSchedule {
    pub fn linear() -> Self {
        Self::builtin(ScheduleKind::Linear)
    }

    pub fn trig() -> Self {
        Self::builtin(ScheduleKind::Trig)
    }

    pub fn vp_diffusion() -> Self {
        Self::builtin(ScheduleKind::VpDiffusion)
    }

    pub fn ve_diffusion(horizon: f64) -> Self {
        InterpolantSchedule {
            kind: ScheduleKind::VeDiffusion,
            ve_horizon: horizon,
            custom: None,
            pinned: false,
        }
    }

    fn builtin(kind: ScheduleKind) -> Self {
        InterpolantSchedule {
            kind,
            ve_horizon: DEFAULT_VE_HORIZON,
            custom: None,
            pinned: matches!(kind, ScheduleKind::Linear | ScheduleKind::Trig),
        }
    }

    /// Builds a schedule from user-supplied coefficient functions.
    ///
    /// The supplied derivatives are compared against finite differences of the
    /// coefficients on 101 uniform points and rejected if they disagree.
    pub fn custom(coefficients: CustomCoefficients) -> Result<Self> {
        let value = |t: f64| Coefficients {
            alpha: (coefficients.alpha)(t),
            beta: (coefficients.beta)(t),
            gamma: (coefficients.gamma)(t),
            alpha_dot: (coefficients.alpha_dot)(t),
            beta_dot: (coefficients.beta_dot)(t),
            gamma_dot: (coefficients.gamma_dot)(t),
        };
        if let Some(msg) = derivative_mismatch(&value, false) {
            return Err(Error::Config(format!("custom schedule rejected: {msg}")));
        }
        let c0 = value(0.0);
        let c1 = value(1.0);
        let pinned = (c0.alpha - 1.0).abs() <= ENDPOINT_TOL
            && c0.beta.abs() <= ENDPOINT_TOL
            && c0.gamma.abs() <= ENDPOINT_TOL
            && c1.alpha.abs() <= ENDPOINT_TOL
            && (c1.beta - 1.0).abs() <= ENDPOINT_TOL
            && c1.gamma.abs() <= ENDPOINT_TOL;
        Ok(InterpolantSchedule {
            kind: ScheduleKind::Custom,
            ve_horizon: DEFAULT_VE_HORIZON,
            custom: Some(coefficients),
            pinned,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn ve_horizon(&self) -> f64 {
        self.ve_horizon
    }

    /// True when `I₀ = x₀` and `I₁ = x₁` for every draw.
    pub fn pins_endpoints(&self) -> bool {
        self.pinned
    }

    /// True when the path starts from the noise (`I₀ = z`) rather than `x₀`.
    pub fn gaussian_base(&self) -> bool {
        self.kind == ScheduleKind::VpDiffusion
    }

    /// Evaluates `(α, β, γ, α̇, β̇, γ̇)` at `t ∈ [0, 1]`.
    pub fn eval(&self, t: f64) -> Result<Coefficients> {
        check_unit_time("t", t)?;
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> Coefficients {
        match self.kind {
            ScheduleKind::Linear => Coefficients {
                alpha: 1.0 - t,
                beta: t,
                gamma: 0.0,
                alpha_dot: -1.0,
                beta_dot: 1.0,
                gamma_dot: 0.0,
            },
            ScheduleKind::Trig => {
                let (sin, cos) = (FRAC_PI_2 * t).sin_cos();
                Coefficients {
                    alpha: cos,
                    beta: sin,
                    gamma: 0.0,
                    alpha_dot: -FRAC_PI_2 * sin,
                    beta_dot: FRAC_PI_2 * cos,
                    gamma_dot: 0.0,
                }
            }
            ScheduleKind::VpDiffusion => {
                let gamma = (1.0 - t * t).max(0.0).sqrt();
                // γ̇ = −t/γ diverges at t = 1; only γ² is C¹ there.
                let gamma_dot = if gamma > 0.0 { -t / gamma } else { f64::NEG_INFINITY };
                Coefficients {
                    alpha: 0.0,
                    beta: t,
                    gamma,
                    alpha_dot: 0.0,
                    beta_dot: 1.0,
                    gamma_dot,
                }
            }
            ScheduleKind::VeDiffusion => Coefficients {
                alpha: 0.0,
                beta: 1.0,
                gamma: self.ve_horizon - t,
                alpha_dot: 0.0,
                beta_dot: 0.0,
                gamma_dot: -1.0,
            },
            ScheduleKind::Custom => {
                let c = self.custom.as_ref().expect("custom schedule carries functions");
                Coefficients {
                    alpha: (c.alpha)(t),
                    beta: (c.beta)(t),
                    gamma: (c.gamma)(t),
                    alpha_dot: (c.alpha_dot)(t),
                    beta_dot: (c.beta_dot)(t),
                    gamma_dot: (c.gamma_dot)(t),
                }
            }
        }
    }

    /// Compares the analytic derivatives with finite differences on 101
    /// uniform points. Returns a description of the first mismatch.
    pub fn derivative_check(&self) -> Option<String> {
        let skip_singular_end = self.kind == ScheduleKind::VpDiffusion;
        derivative_mismatch(&|t| self.eval_unchecked(t), skip_singular_end)
    }
}

fn derivative_mismatch(
    value: &dyn Fn(f64) -> Coefficients,
    skip_singular_end: bool,
) -> Option<String> {
    let h = DERIVATIVE_FD_STEP;
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        if skip_singular_end && i == 100 {
            continue;
        }
        // Central differences in the interior, second-order one-sided at the ends.
        let fd = |f: &dyn Fn(Coefficients) -> f64| -> f64 {
            if i == 0 {
                (-3.0 * f(value(t)) + 4.0 * f(value(t + h)) - f(value(t + 2.0 * h))) / (2.0 * h)
            } else if i == 100 {
                (3.0 * f(value(t)) - 4.0 * f(value(t - h)) + f(value(t - 2.0 * h))) / (2.0 * h)
            } else {
                (f(value(t + h)) - f(value(t - h))) / (2.0 * h)
            }
        };
        let c = value(t);
        let checks: [(&str, f64, f64); 3] = [
            ("alpha", c.alpha_dot, fd(&|c| c.alpha)),
            ("beta", c.beta_dot, fd(&|c| c.beta)),
            ("gamma", c.gamma_dot, fd(&|c| c.gamma)),
        ];
        for (name, analytic, numeric) in checks {
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            if !(err <= DERIVATIVE_REL_TOL) {
                return Some(format!(
                    "d{name}/dt at t={t}: analytic {analytic}, finite difference {numeric}"
                ));
            }
        }
    }
    None
}

/// Geometry of the checkerboard target: `cells × cells` squares tiling
/// `[−half_width, half_width]²`, with mass on cells whose indices sum to an
/// even number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkerboard {
    pub cells: usize,
    pub half_width: f64,
}

impl Default for Checkerboard {
    fn default() -> Self {
        Checkerboard {
            cells: 4,
            half_width: 4.0,
        }
    }
}

impl Checkerboard {
    pub fn cell_size(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    /// Grid indices `(column, row)` of the cell containing `p`.
    pub fn cell_of(&self, p: ArrayView1<f64>) -> Option<(usize, usize)> {
        let size = self.cell_size();
        let ix = ((p[0] + self.half_width) / size).floor();
        let iy = ((p[1] + self.half_width) / size).floor();
        let n = self.cells as f64;
        if ix < 0.0 || iy < 0.0 || ix >= n || iy >= n || !ix.is_finite() || !iy.is_finite() {
            return None;
        }
        Some((ix as usize, iy as usize))
    }

    pub fn is_black(cell: (usize, usize)) -> bool {
        (cell.0 + cell.1) % 2 == 0
    }

    /// The black cells, in row-major order.
    pub fn black_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for iy in 0..self.cells {
            for ix in 0..self.cells {
                if Self::is_black((ix, iy)) {
                    out.push((ix, iy));
                }
            }
        }
        out
    }

    /// Class of a black cell: the two diagonal sub-lattices get labels 0 and 1.
    pub fn class_of_cell(cell: (usize, usize)) -> usize {
        cell.1 % 2
    }

    pub fn contains(&self, p: ArrayView1<f64>) -> bool {
        self.cell_of(p).is_some_and(Self::is_black)
    }

    /// Class label of the support cell containing `p`, if any.
    pub fn class_of(&self, p: ArrayView1<f64>) -> Option<usize> {
        self.cell_of(p)
            .filter(|c| Self::is_black(*c))
            .map(Self::class_of_cell)
    }

    fn sample_in_cell<R: Rng + ?Sized>(&self, cell: (usize, usize), rng: &mut R) -> [f64; 2] {
        let size = self.cell_size();
        let x = -self.half_width + (cell.0 as f64 + rng.random::<f64>()) * size;
        let y = -self.half_width + (cell.1 as f64 + rng.random::<f64>()) * size;
        [x, y]
    }

    /// Uniform sample from the black cells carrying `label`.
    pub fn sample_class<R: Rng + ?Sized>(&self, label: usize, rng: &mut R) -> [f64; 2] {
        let cells: Vec<_> = self
            .black_cells()
            .into_iter()
            .filter(|c| Self::class_of_cell(*c) == label)
            .collect();
        let cell = cells[rng.random_range(0..cells.len())];
        self.sample_in_cell(cell, rng)
    }

    /// Uniform sample from the whole board support, with its class label.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ([f64; 2], usize) {
        let cells = self.black_cells();
        let cell = cells[rng.random_range(0..cells.len())];
        (self.sample_in_cell(cell, rng), Self::class_of_cell(cell))
    }
}

/// A procedural density in `ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    StandardNormal { dim: usize },
    /// Independent Gaussian components with the given means and standard deviations.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Checkerboard { board: Checkerboard, labeled: bool },
}

impl Density {
    pub fn dim(&self) -> usize {
        match self {
            Density::StandardNormal { dim } => *dim,
            Density::Gaussian { mean, .. } => mean.len(),
            Density::Checkerboard { .. } => 2,
        }
    }

    /// Number of class labels this density emits (0 when unlabeled).
    pub fn label_count(&self) -> usize {
        match self {
            Density::Checkerboard { labeled: true, .. } => 2,
            _ => 0,
        }
    }

    /// Draws `n` points as rows, plus class labels for labeled densities.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Array2<f64>, Option<Vec<usize>>) {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        match self {
            Density::StandardNormal { .. } => {
                out.mapv_inplace(|_| rng.sample(StandardNormal));
                (out, None)
            }
            Density::Gaussian { mean, std } => {
                for mut row in out.rows_mut() {
                    for k in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        row[k] = mean[k] + std[k] * z;
                    }
                }
                (out, None)
            }
            Density::Checkerboard { board, labeled } => {
                let mut labels = Vec::with_capacity(n);
                for mut row in out.rows_mut() {
                    let (p, label) = board.sample(rng);
                    row[0] = p[0];
                    row[1] = p[1];
                    labels.push(label);
                }
                (out, labeled.then_some(labels))
            }
        }
    }
}

/// `n × d` matrix of independent standard normal draws.
pub fn standard_normal<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

/// One paired sample `(x₀, x₁, label)` of a dataset coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub label: Option<usize>,
}

/// Joint law of the interpolant endpoints.
#[derive(Debug, Clone)]
pub enum Coupling {
    /// `x₀` and `x₁` drawn independently from their marginals.
    Independent { base: Density, target: Density },
    /// Pairs drawn uniformly (with replacement) from a fixed dataset.
    PairedDataset { pairs: Arc<Vec<PairedSample>> },
}

impl Coupling {
    pub fn independent(base: Density, target: Density) -> Result<Self> {
        if base.dim() != target.dim() {
            return Err(Error::Config(format!(
                "coupling dimension mismatch: base {} vs target {}",
                base.dim(),
                target.dim()
            )));
        }
        Ok(Coupling::Independent { base, target })
    }

    pub fn paired(pairs: Vec<PairedSample>) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::Config("paired coupling needs at least one pair".into()))?;
        let d = first.x0.len();
        if pairs.iter().any(|p| p.x0.len() != d || p.x1.len() != d) {
            return Err(Error::Config("paired coupling has inconsistent dimensions".into()));
        }
        Ok(Coupling::PairedDataset {
            pairs: Arc::new(pairs),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Coupling::Independent { base, .. } => base.dim(),
            Coupling::PairedDataset { pairs } => pairs[0].x0.len(),
        }
    }

    pub fn label_count(&self) -> usize {
        match self {
            Coupling::Independent { target, .. } => target.label_count(),
            Coupling::PairedDataset { pairs } => pairs
                .iter()
                .filter_map(|p| p.label)
                .max()
                .map_or(0, |m| m + 1),
        }
    }

    /// Draws `n` endpoint pairs.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> (Array2<f64>, Array2<f64>, Option<Vec<usize>>) {
        match self {
            Coupling::Independent { base, target } => {
                let (x0, _) = base.sample(n, rng);
                let (x1, labels) = target.sample(n, rng);
                (x0, x1, labels)
            }
            Coupling::PairedDataset { pairs } => {
                let d = self.dim();
                let mut x0 = Array2::zeros((n, d));
                let mut x1 = Array2::zeros((n, d));
                let labeled = pairs[0].label.is_some();
                let mut labels = Vec::with_capacity(n);
                for i in 0..n {
                    let p = &pairs[rng.random_range(0..pairs.len())];
                    x0.row_mut(i).assign(&ArrayView1::from(&p.x0));
                    x1.row_mut(i).assign(&ArrayView1::from(&p.x1));
                    labels.push(p.label.unwrap_or(0));
                }
                (x0, x1, labeled.then_some(labels))
            }
        }
    }
}

/// Law of the time pair `(s, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeWeight {
    /// Uniform on the unit square.
    UniformSquare,
    /// Uniform on the band `|t − s| ≤ 1/K`.
    Strip(u32),
    /// Uniform on the triangle `s ≤ t`.
    ForwardOnly,
    /// Uniform on the band `0 ≤ t − s ≤ 1/K`.
    ForwardStrip(u32),
}

impl TimeWeight {
    pub fn is_symmetric(&self) -> bool {
        matches!(self, TimeWeight::UniformSquare | TimeWeight::Strip(_))
    }

    /// Fraction of unit-square proposals the rejection sampler accepts.
    pub fn acceptance_rate(&self) -> f64 {
        match *self {
            TimeWeight::UniformSquare | TimeWeight::ForwardOnly => 1.0,
            TimeWeight::Strip(k) | TimeWeight::ForwardStrip(k) => {
                let w = 1.0 / k as f64;
                2.0 * w - w * w
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TimeWeight::Strip(0) | TimeWeight::ForwardStrip(0) => {
                Err(Error::Config("strip weight needs K ≥ 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let width = match *self {
            TimeWeight::Strip(k) | TimeWeight::ForwardStrip(k) => Some(1.0 / k as f64),
            _ => None,
        };
        let (mut s, mut t) = loop {
            let s: f64 = rng.random();
            let t: f64 = rng.random();
            match width {
                Some(w) if (t - s).abs() > w => continue,
                _ => break (s, t),
            }
        };
        if matches!(self, TimeWeight::ForwardOnly | TimeWeight::ForwardStrip(_)) && s > t {
            std::mem::swap(&mut s, &mut t);
        }
        (s, t)
    }

    pub fn name(&self) -> String {
        match self {
            TimeWeight::UniformSquare => "uniform-square".into(),
            TimeWeight::Strip(k) => format!("strip({k})"),
            TimeWeight::ForwardOnly => "forward-only".into(),
            TimeWeight::ForwardStrip(k) => format!("forward-strip({k})"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let strip_arg = |prefix: &str| -> Option<Result<u32>> {
            text.strip_prefix(prefix)
                .and_then(|rest| rest.strip_suffix(')'))
                .map(|k| {
                    k.trim()
                        .parse::<u32>()
                        .map_err(|_| Error::Config(format!("bad strip parameter in `{text}`")))
                })
        };
        let weight = match text {
            "uniform-square" => TimeWeight::UniformSquare,
            "forward-only" => TimeWeight::ForwardOnly,
            _ => {
                if let Some(k) = strip_arg("strip(") {
                    TimeWeight::Strip(k?)
                } else if let Some(k) = strip_arg("forward-strip(") {
                    TimeWeight::ForwardStrip(k?)
                } else {
                    return Err(Error::Config(format!("unknown time weight `{text}`")));
                }
            }
        };
        weight.validate()?;
        Ok(weight)
    }
}

/// A single interpolant sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantDraw {
    pub s: f64,
    pub t: f64,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub z: Vec<f64>,
    /// `I_t`.
    pub i: Vec<f64>,
    /// `İ_t`.
    pub idot: Vec<f64>,
    pub label: Option<usize>,
}

impl InterpolantDraw {
    /// Builds a draw from explicit endpoints, evaluating the path at `t`.
    pub fn from_parts(
        schedule: &InterpolantSchedule,
        s: f64,
        t: f64,
        x0: Vec<f64>,
        x1: Vec<f64>,
        z: Vec<f64>,
        label: Option<usize>,
    ) -> Result<Self> {
        check_unit_time("s", s)?;
        let (i, idot) = path_point(schedule, t, &x0, &x1, &z)?;
        Ok(InterpolantDraw {
            s,
            t,
            x0,
            x1,
            z,
            i,
            idot,
            label,
        })
    }

    /// Re-evaluates the same stochastic path at time `tau`.
    pub fn eval_at(&self, schedule: &InterpolantSchedule, tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        path_point(schedule, tau, &self.x0, &self.x1, &self.z)
    }
}

fn path_point(
    schedule: &InterpolantSchedule,
    t: f64,
    x0: &[f64],
    x1: &[f64],
    z: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = schedule.eval(t)?;
    let i = (0..x0.len())
        .map(|k| c.alpha * x0[k] + c.beta * x1[k] + c.gamma * z[k])
        .collect();
    let idot = (0..x0.len())
        .map(|k| c.alpha_dot * x0[k] + c.beta_dot * x1[k] + c.gamma_dot * z[k])
        .collect();
    Ok((i, idot))
}

/// Draws one interpolant sample.
pub fn draw_interpolant<R: Rng + ?Sized>(
    schedule: &InterpolantSchedule,
    coupling: &Coupling,
    weight: TimeWeight,
    rng: &mut R,
) -> Result<InterpolantDraw> {
    let batch = draw_batch(schedule, coupling, weight, 1, rng)?;
    Ok(batch.draw(0))
}

/// A batch of interpolant samples stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawBatch {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub x0: Array2<f64>,
    pub x1: Array2<f64>,
    pub z: Array2<f64>,
    /// `I_t` per row.
    pub i_t: Array2<f64>,
    /// `İ_t` per row.
    pub idot_t: Array2<f64>,
    pub labels: Option<Vec<usize>>,
}

impl DrawBatch {
    /// Assembles a batch from explicit parts, evaluating the path at each `t`.
    pub fn from_parts(
        schedule: &InterpolantSchedule,
        s: Vec<f64>,
        t: Vec<f64>,
        x0: Array2<f64>,
        x1: Array2<f64>,
        z: Array2<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let m = s.len();
        if t.len() != m || x0.nrows() != m || x1.nrows() != m || z.nrows() != m {
            return Err(Error::Usage("draw batch parts disagree on batch size".into()));
        }
        if x0.dim() != x1.dim() || x0.dim() != z.dim() {
            return Err(Error::Usage("draw batch parts disagree on dimension".into()));
        }
        for &v in &s {
            check_unit_time("s", v)?;
        }
        let mut batch = DrawBatch {
            s,
            t,
            i_t: Array2::zeros(x0.raw_dim()),
            idot_t: Array2::zeros(x0.raw_dim()),
            x0,
            x1,
            z,
            labels,
        };
        let (i, idot) = batch.eval_at(schedule, &batch.t)?;
        batch.i_t = i;
        batch.idot_t = idot;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x0.ncols()
    }

    /// Re-evaluates each row's path at its own time `taus[i]`.
    pub fn eval_at(
        &self,
        schedule: &InterpolantSchedule,
        taus: &[f64],
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if taus.len() != self.len() {
            return Err(Error::Usage("eval_at needs one time per row".into()));
        }
        let mut i = Array2::zeros(self.x0.raw_dim());
        let mut idot = Array2::zeros(self.x0.raw_dim());
        for (row, &tau) in taus.iter().enumerate() {
            let c = schedule.eval(tau)?;
            let (x0, x1, z) = (self.x0.row(row), self.x1.row(row), self.z.row(row));
            let mut ir = i.row_mut(row);
            ir.assign(&(&x0 * c.alpha + &x1 * c.beta + &z * c.gamma));
            let mut dr = idot.row_mut(row);
            dr.assign(&(&x0 * c.alpha_dot + &x1 * c.beta_dot + &z * c.gamma_dot));
        }
        Ok((i, idot))
    }

    /// Path values at `s` for every row.
    pub fn at_s(&self, schedule: &InterpolantSchedule) -> Result<(Array2<f64>, Array2<f64>)> {
        self.eval_at(schedule, &self.s)
    }

    /// Extracts row `i` as a standalone draw.
    pub fn draw(&self, i: usize) -> InterpolantDraw {
        InterpolantDraw {
            s: self.s[i],
            t: self.t[i],
            x0: self.x0.row(i).to_vec(),
            x1: self.x1.row(i).to_vec(),
            z: self.z.row(i).to_vec(),
            i: self.i_t.row(i).to_vec(),
            idot: self.idot_t.row(i).to_vec(),
            label: self.labels.as_ref().map(|l| l[i]),
        }
    }

    /// Rows `range` as a new batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> DrawBatch {
        let rows = |a: &Array2<f64>| a.slice(ndarray::s![range.clone(), ..]).to_owned();
        DrawBatch {
            s: self.s[range.clone()].to_vec(),
            t: self.t[range.clone()].to_vec(),
            x0: rows(&self.x0),
            x1: rows(&self.x1),
            z: rows(&self.z),
            i_t: rows(&self.i_t),
            idot_t: rows(&self.idot_t),
            labels: self.labels.as_ref().map(|l| l[range.clone()].to_vec()),
        }
    }
}

/// Draws a batch of `m` interpolant samples.
pub fn draw_batch<R: Rng + ?Sized>(
    schedule: &InterpolantSchedule,
    coupling: &Coupling,
    weight: TimeWeight,
    m: usize,
    rng: &mut R,
) -> Result<DrawBatch> {
    weight.validate()?;
    let (s, t): (Vec<f64>, Vec<f64>) = (0..m).map(|_| weight.sample(rng)).unzip();
    let (x0, x1, labels) = coupling.sample(m, rng);
    let z = standard_normal(m, coupling.dim(), rng);
    DrawBatch::from_parts(schedule, s, t, x0, x1, z, labels)
}

/// Per-row mean and sample covariance of a point cloud.
pub fn moments(points: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = points.nrows() as f64;
    let mean = points.mean_axis(Axis(0)).expect("non-empty");
    let centered = points - &mean;
    let cov = centered.t().dot(&centered) / (n - 1.0);
    (mean, cov)
}
