//! Batch estimators of the training losses.
//!
//! Every loss records its computation on a [`LossGraph`] and returns the node
//! of the scalar batch mean, ready for [`LossGraph::param_grad`]. Teachers are
//! frozen: their parameters never receive gradient, though gradient still
//! flows through a teacher evaluated at a student-dependent point.

use ndarray::Array2;

use crate::diffnet::{FlowMap, LossGraph, NodeId, TangentSeed, VelocityField};
use crate::error::{Error, Result};
use crate::interpolant::{DrawBatch, InterpolantSchedule, TimeWeight};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Velocity,
    Lmd,
    Emd,
    Fmm,
    Pfmm(u32),
    Ee,
    Denoiser,
}

impl LossKind {
    pub fn name(&self) -> String {
        match self {
            LossKind::Velocity => "velocity".into(),
            LossKind::Lmd => "lmd".into(),
            LossKind::Emd => "emd".into(),
            LossKind::Fmm => "fmm".into(),
            LossKind::Pfmm(k) => format!("pfmm({k})"),
            LossKind::Ee => "ee".into(),
            LossKind::Denoiser => "denoiser".into(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(match text {
            "velocity" => LossKind::Velocity,
            "lmd" => LossKind::Lmd,
            "emd" => LossKind::Emd,
            "fmm" => LossKind::Fmm,
            "ee" => LossKind::Ee,
            "denoiser" => LossKind::Denoiser,
            _ => {
                let k = text
                    .strip_prefix("pfmm(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|k| k.trim().parse::<u32>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown loss kind `{text}`")))?;
                LossKind::Pfmm(k)
            }
        })
    }

    /// Whether the loss needs a frozen velocity teacher.
    pub fn needs_velocity_teacher(&self) -> bool {
        matches!(self, LossKind::Lmd | LossKind::Emd)
    }
}

/// Batch-level description of one loss estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBatchSpec {
    pub batch_size: usize,
    pub weight: TimeWeight,
    pub kind: LossKind,
}

impl LossBatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.weight.validate()?;
        match self.kind {
            LossKind::Pfmm(k) if k < 2 => Err(Error::Config("pfmm needs K ≥ 2".into())),
            LossKind::Fmm if !self.weight.is_symmetric() => Err(Error::Config(format!(
                "flow map matching learns both directions and needs a symmetric weight, got {}",
                self.weight.name()
            ))),
            _ => Ok(()),
        }
    }
}

/// How `∂_t X̂` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TimeDerivative {
    /// Exact tangent pass recorded on the graph.
    #[default]
    Exact,
    /// Central difference with the given step. For debugging only.
    FiniteDifference(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    /// Relative weight of the invertibility term in flow map matching.
    pub fmm_invertibility_weight: f64,
    pub time_derivative: TimeDerivative,
    /// Mutation-test hook: negates the transport direction in the Eulerian
    /// distillation residual.
    pub flip_emd_direction: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            fmm_invertibility_weight: 1.0,
            time_derivative: TimeDerivative::Exact,
            flip_emd_direction: false,
        }
    }
}

fn freeze_teacher<'a, B: VelocityField + ?Sized>(g: &mut LossGraph<'a>, teacher: &'a B) {
    if let Some(p) = teacher.params() {
        g.freeze(p);
    }
}

/// `X̂_{s,t}(x)` and `∂_t X̂_{s,t}(x)` with `x` held fixed.
#[allow(clippy::too_many_arguments)]
fn with_time_derivative<'a, F: FlowMap + ?Sized>(
    g: &mut LossGraph<'a>,
    map: &'a F,
    s: &[f64],
    t: &[f64],
    x: NodeId,
    labels: Option<&[usize]>,
    how: TimeDerivative,
) -> Result<(NodeId, NodeId)> {
    match how {
        TimeDerivative::Exact => {
            let (out, d) = map.apply(g, s, t, x, labels, Some(&TangentSeed::d_t()))?;
            let d = d.ok_or_else(|| Error::Internal("missing time tangent".into()))?;
            Ok((out, d))
        }
        TimeDerivative::FiniteDifference(h) => {
            let (out, _) = map.apply(g, s, t, x, labels, None)?;
            let up: Vec<f64> = t.iter().map(|t| t + h).collect();
            let down: Vec<f64> = t.iter().map(|t| t - h).collect();
            let (a, _) = map.apply(g, s, &up, x, labels, None)?;
            let (b, _) = map.apply(g, s, &down, x, labels, None)?;
            let diff = g.sub(a, b);
            Ok((out, g.scale(diff, 0.5 / h)))
        }
    }
}

fn labels(batch: &DrawBatch) -> Option<&[usize]> {
    batch.labels.as_deref()
}

/// Velocity regression: `(1/M) Σ ‖b̂_t(I_t) − İ_t‖²`.
pub fn loss_velocity<'a, B: VelocityField + ?Sized>(
    g: &mut LossGraph<'a>,
    model: &'a B,
    batch: &DrawBatch,
) -> Result<NodeId> {
    let x = g.constant(batch.i_t.clone());
    let pred = model.apply(g, &batch.t, x, labels(batch))?;
    let target = g.constant(batch.idot_t.clone());
    let r = g.sub(pred, target);
    Ok(g.mean_square_norm(r))
}

/// Per-row Lagrangian residual `∂_t X̂_{s,t}(I_s) − b_t(X̂_{s,t}(I_s))`.
pub fn lmd_residual<'a, F: FlowMap + ?Sized, B: VelocityField + ?Sized>(
    g: &mut LossGraph<'a>,
    student: &'a F,
    teacher: &'a B,
    schedule: &InterpolantSchedule,
    batch: &DrawBatch,
    opts: &LossOptions,
) -> Result<NodeId> {
    freeze_teacher(g, teacher);
    let (i_s, _) = batch.at_s(schedule)?;
    let x = g.constant(i_s);
    let (out, dt) = with_time_derivative(g, student, &batch.s, &batch.t, x, labels(batch), opts.time_derivative)?;
    let b = teacher.apply(g, &batch.t, out, labels(batch))?;
    Ok(g.sub(dt, b))
}

/// Lagrangian distillation: `(1/M) Σ ‖∂_t X̂_{s,t}(I_s) − b_t(X̂_{s,t}(I_s))‖²`.
pub fn loss_lmd<'a, F: FlowMap + ?Sized, B: VelocityField + ?Sized>(
    g: &mut LossGraph<'a>,
    student: &'a F,
    teacher: &'a B,
    schedule: &InterpolantSchedule,
    batch: &DrawBatch,
    opts: &LossOptions,
) -> Result<NodeId> {
    let r = lmd_residual(g, student, teacher, schedule, batch, opts)?;
    Ok(g.mean_square_norm(r))
}

/// Per-row Eulerian residual `∂_s X̂_{s,t}(I_s) + ∇X̂_{s,t}(I_s)·b_s(I_s)`.
///
/// Both directional derivatives come from a single tangent pass seeded with
/// `(ds, dx) = (1, b_s(I_s))`.
pub fn emd_residual<'a, F: FlowMap + ?Sized, B: VelocityField + ?Sized>(
    g: &mut LossGraph<'a>,
    student: &'a F,
    teacher: &'a B,
    schedule: &InterpolantSchedule,
    batch: &DrawBatch,
    opts: &LossOptions,
) -> Result<NodeId> {
    let (i_s, _) = batch.at_s(schedule)?;
    let mut b = teacher.eval(&batch.s, i_s.view(), labels(batch))?;
    if opts.flip_emd_direction {
        b.mapv_inplace(|v| -v);
    }
    let x = g.constant(i_s);
    let dir = g.constant(b);
    let seed = TangentSeed {
        ds: 1.0,
        dt: 0.0,
        dx: Some(dir),
    };
    let (_, residual) = student.apply(g, &batch.s, &batch.t, x, labels(batch), Some(&seed))?;
    residual.ok_or_else(|| Error::Internal("missing tangent".into()))
}

/// Eulerian distillation: `(1/M) Σ ‖∂_s X̂_{s,t}(I_s) + ∇X̂_{s,t}(I_s)·b_s(I_s)‖²`.
pub fn loss_emd<'a, F: FlowMap + ?Sized, B: VelocityField + ?Sized>(
    g: &mut LossGraph<'a>,
    student: &'a F,
    teacher: &'a B,
    schedule: &InterpolantSchedule,
    batch: &DrawBatch,
    opts: &LossOptions,
) -> Result<NodeId> {
    let r = emd_residual(g, student, teacher, schedule, batch, opts)?;
    Ok(g.mean_square_norm(r))
}

/// The two terms of flow map matching.
#[derive(Debug, Clone, Copy)]
pub struct FmmTerms {
    pub total: NodeId,
    /// `(1/M) Σ ‖∂_t X̂_{s,t}(y) − İ_t‖²`, `y = X̂_{t,s}(I_t)`.
    pub lagrangian: NodeId,
    /// `(1/M) Σ ‖X̂_{s,t}(y) − I_t‖²`.
    pub invertibility: NodeId,
}

/// Flow map matching with both terms exposed.
///
/// `∂_t` is the partial derivative of the outer map in its second time
/// argument with the inner point `y` held fixed; gradient reaches the
/// parameters through both the outer and the inner evaluation.
pub fn loss_fmm_terms<'a, F: FlowMap + ?Sized>(
    g: &mut LossGraph<'a>,
    map: &'a F,
    batch: &DrawBatch,
    opts: &LossOptions,
) -> Result<FmmTerms> {
    let x = g.constant(batch.i_t.clone());
    let (inner, _) = map.apply(g, &batch.t, &batch.s, x, labels(batch), None)?;
    let (outer, dt) = with_time_derivative(g, map, &batch.s, &batch.t, inner, labels(batch), opts.time_derivative)?;
    let idot = g.constant(batch.idot_t.clone());
    let r1 = g.sub(dt, idot);
    let lagrangian = g.mean_square_norm(r1);
    let r2 = g.sub(outer, x);
    let invertibility = g.mean_square_norm(r2);
    let weighted = g.scale(invertibility, opts.fmm_invertibility_weight);
    let total = g.add(lagrangian, weighted);
    Ok(FmmTerms {
        total,
        lagrangian,
        invertibility,
    })
}

pub fn loss_fmm<'a, F: FlowMap + ?Sized>(
    g: &mut LossGraph<'a>,
    map: &'a F,
    batch: &DrawBatch,
    opts: &LossOptions,
) -> Result<NodeId> {
    Ok(loss_fmm_terms(g, map, batch, opts)?.total)
}

/// Intermediate times `t_k = s + (k−1)/(K−1)·(t − s)`, `k = 1..=K`.
pub fn progressive_grid(s: f64, t: f64, k: u32) -> Vec<f64> {
    let k = k as usize;
    (0..k)
        .map(|j| {
            if j + 1 == k {
                t
            } else {
                s + j as f64 / (k - 1) as f64 * (t - s)
            }
        })
        .collect()
}

/// Progressive flow map matching: regress the student's one-jump map onto the
/// teacher's `(K−1)`-jump composition over the grid of [`progressive_grid`].
/// The composition sits behind a stop-gradient barrier.
pub fn loss_pfmm<'a, F: FlowMap + ?Sized, T: FlowMap + ?Sized>(
    g: &mut LossGraph<'a>,
    student: &'a F,
    teacher: &'a T,
    k: u32,
    schedule: &InterpolantSchedule,
    batch: &DrawBatch,
) -> Result<NodeId> {
    if k < 2 {
        return Err(Error::Config("pfmm needs K ≥ 2".into()));
    }
    let (i_s, _) = batch.at_s(schedule)?;
    let x = g.constant(i_s);
    let grids: Vec<Vec<f64>> = batch
        .s
        .iter()
        .zip(&batch.t)
        .map(|(&s, &t)| progressive_grid(s, t, k))
        .collect();
    let mut y = x;
    for j in 0..(k as usize - 1) {
        let from: Vec<f64> = grids.iter().map(|gr| gr[j]).collect();
        let to: Vec<f64> = grids.iter().map(|gr| gr[j + 1]).collect();
        y = teacher.apply(g, &from, &to, y, labels(batch), None)?.0;
    }
    let target = g.stop_gradient(y);
    let (pred, _) = student.apply(g, &batch.s, &batch.t, x, labels(batch), None)?;
    let r = g.sub(pred, target);
    Ok(g.mean_square_norm(r))
}

/// Eulerian estimation: `(1/M) Σ ‖∂_s X̂_{s,t}(I_s) + stopgrad(∇X̂_{s,t}(I_s)·İ_s)‖²`.
///
/// Only the `∂_s` branch receives gradient.
pub fn loss_ee<'a, F: FlowMap + ?Sized>(
    g: &mut LossGraph<'a>,
    map: &'a F,
    schedule: &InterpolantSchedule,
    batch: &DrawBatch,
) -> Result<NodeId> {
    let (i_s, idot_s) = batch.at_s(schedule)?;
    let x = g.constant(i_s);
    let (_, ds) = map.apply(g, &batch.s, &batch.t, x, labels(batch), Some(&TangentSeed::d_s()))?;
    let dir = g.constant(idot_s);
    let (_, jvp) = map.apply(g, &batch.s, &batch.t, x, labels(batch), Some(&TangentSeed::along_x(dir)))?;
    let ds = ds.ok_or_else(|| Error::Internal("missing tangent".into()))?;
    let jvp = jvp.ok_or_else(|| Error::Internal("missing tangent".into()))?;
    let frozen = g.stop_gradient(jvp);
    let r = g.add(ds, frozen);
    Ok(g.mean_square_norm(r))
}

/// Denoiser objective `(1/M) Σ ‖∂_t X̂_{s,t}(I_s) − İ_t‖²`. Its minimizer is
/// `𝔼[I_t | I_s]`, which collapses one-step generation onto the target mean.
pub fn loss_denoiser<'a, F: FlowMap + ?Sized>(
    g: &mut LossGraph<'a>,
    map: &'a F,
    schedule: &InterpolantSchedule,
    batch: &DrawBatch,
    opts: &LossOptions,
) -> Result<NodeId> {
    let (i_s, _) = batch.at_s(schedule)?;
    let x = g.constant(i_s);
    let (_, dt) = with_time_derivative(g, map, &batch.s, &batch.t, x, labels(batch), opts.time_derivative)?;
    let idot = g.constant(batch.idot_t.clone());
    let r = g.sub(dt, idot);
    Ok(g.mean_square_norm(r))
}

/// Per-row squared norms of a matrix, for Monte-Carlo standard errors.
pub fn row_square_norms(m: &Array2<f64>) -> Vec<f64> {
    m.rows().into_iter().map(|r| r.dot(&r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in [
            LossKind::Velocity,
            LossKind::Lmd,
            LossKind::Emd,
            LossKind::Fmm,
            LossKind::Pfmm(5),
            LossKind::Ee,
            LossKind::Denoiser,
        ] {
            assert_eq!(LossKind::parse(&k.name()).unwrap(), k);
        }
        assert!(LossKind::parse("pfmm(x)").is_err());
    }

    #[test]
    fn batch_spec_validation() {
        let ok = LossBatchSpec {
            batch_size: 4,
            weight: TimeWeight::Strip(4),
            kind: LossKind::Fmm,
        };
        assert!(ok.validate().is_ok());
        let asym = LossBatchSpec {
            weight: TimeWeight::ForwardOnly,
            ..ok
        };
        assert!(asym.validate().is_err());
        let pfmm = LossBatchSpec {
            kind: LossKind::Pfmm(1),
            ..ok
        };
        assert!(pfmm.validate().is_err());
        let empty = LossBatchSpec { batch_size: 0, ..ok };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn progressive_grid_endpoints() {
        assert_eq!(progressive_grid(0.0, 1.0, 5), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(progressive_grid(0.3, 0.3, 2), vec![0.3, 0.3]);
        let g = progressive_grid(0.9, 0.1, 3);
        assert_eq!(g[0], 0.9);
        assert_eq!(g[2], 0.1);
    }
}
