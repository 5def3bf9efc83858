//! Minibatch training loops for velocity fields and flow maps.

use std::io::Write;

use crate::diffnet::{adam_step, AdamConfig, AdamState, FlowMap, FlowMapModel, LossGraph, VelocityField, VelocityModel};
use crate::error::{Error, Result};
use crate::interpolant::{draw_batch, Coupling, InterpolantSchedule, TimeWeight};
use crate::objectives::{loss_denoiser, loss_ee, loss_emd, loss_fmm, loss_lmd, loss_pfmm, loss_velocity, LossOptions};
use crate::worker_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub weight: TimeWeight,
    pub adam: AdamConfig,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            steps: 20_000,
            batch_size: 256,
            weight: TimeWeight::UniformSquare,
            adam: AdamConfig::default(),
            log_every: 100,
            seed: 0,
        }
    }
}

/// Mean training loss over each logging window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub entries: Vec<(usize, f64)>,
}

impl LossLog {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "step,loss")?;
        for (step, loss) in &self.entries {
            writeln!(w, "{step},{loss}")?;
        }
        Ok(())
    }

    /// Mean of the first and last `fraction` of the logged values.
    pub fn head_tail_means(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.entries.len();
        let k = ((n as f64 * fraction).ceil() as usize).max(1);
        if n < 2 * k {
            return None;
        }
        let mean = |xs: &[(usize, f64)]| xs.iter().map(|e| e.1).sum::<f64>() / xs.len() as f64;
        Some((mean(&self.entries[..k]), mean(&self.entries[n - k..])))
    }
}

/// Which objective a flow map is trained on, with its frozen inputs.
#[derive(Clone, Copy)]
pub enum FlowObjective<'t> {
    Lmd(&'t dyn VelocityField),
    Emd(&'t dyn VelocityField),
    Fmm,
    Pfmm { teacher: &'t dyn FlowMap, k: u32 },
    Ee,
    Denoiser,
}

impl FlowObjective<'_> {
    pub fn name(&self) -> String {
        match self {
            FlowObjective::Lmd(_) => "lmd".into(),
            FlowObjective::Emd(_) => "emd".into(),
            FlowObjective::Fmm => "fmm".into(),
            FlowObjective::Pfmm { k, .. } => format!("pfmm({k})"),
            FlowObjective::Ee => "ee".into(),
            FlowObjective::Denoiser => "denoiser".into(),
        }
    }
}

fn validate(settings: &TrainSettings) -> Result<()> {
    settings.weight.validate()?;
    if settings.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    Ok(())
}

/// Adam on velocity regression. Parameters are left at the last good value
/// if a step fails.
pub fn train_velocity(
    model: &mut VelocityModel,
    schedule: &InterpolantSchedule,
    coupling: &Coupling,
    settings: &TrainSettings,
    state: &mut AdamState,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<LossLog> {
    validate(settings)?;
    let mut rng = worker_rng(settings.seed, 0);
    let mut log = LossLog::default();
    let mut window = (0.0, 0usize);
    for step in 0..settings.steps {
        let batch = draw_batch(schedule, coupling, settings.weight, settings.batch_size, &mut rng)?;
        let (loss, grad) = {
            let mut g = LossGraph::new();
            g.bind(&model.params);
            let root = loss_velocity(&mut g, &*model, &batch)?;
            let grad = g.param_grad(root, &model.params).map_err(|e| at_step(e, step))?;
            (g.scalar(root), grad)
        };
        adam_step(&mut model.params, &grad, state, &settings.adam).map_err(|e| at_step(e, step))?;
        record(&mut log, &mut window, step, loss, settings.log_every, progress);
    }
    Ok(log)
}

/// Adam on one of the flow-map objectives.
#[allow(clippy::too_many_arguments)]
pub fn train_flow_map(
    model: &mut FlowMapModel,
    objective: FlowObjective<'_>,
    schedule: &InterpolantSchedule,
    coupling: &Coupling,
    settings: &TrainSettings,
    opts: &LossOptions,
    state: &mut AdamState,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<LossLog> {
    if matches!(objective, FlowObjective::Fmm) && !settings.weight.is_symmetric() {
        return Err(Error::Config(format!(
            "flow map matching needs a symmetric time weight, got {}",
            settings.weight.name()
        )));
    }
    validate(settings)?;
    let mut rng = worker_rng(settings.seed, 0);
    let mut log = LossLog::default();
    let mut window = (0.0, 0usize);
    for step in 0..settings.steps {
        let batch = draw_batch(schedule, coupling, settings.weight, settings.batch_size, &mut rng)?;
        let (loss, grad) = {
            let mut g = LossGraph::new();
            g.bind(&model.params);
            let m = &*model;
            let root = match objective {
                FlowObjective::Lmd(b) => loss_lmd(&mut g, m, b, schedule, &batch, opts),
                FlowObjective::Emd(b) => loss_emd(&mut g, m, b, schedule, &batch, opts),
                FlowObjective::Fmm => loss_fmm(&mut g, m, &batch, opts),
                FlowObjective::Pfmm { teacher, k } => loss_pfmm(&mut g, m, teacher, k, schedule, &batch),
                FlowObjective::Ee => loss_ee(&mut g, m, schedule, &batch),
                FlowObjective::Denoiser => loss_denoiser(&mut g, m, schedule, &batch, opts),
            }
            .map_err(|e| at_step(e, step))?;
            let grad = g.param_grad(root, &model.params).map_err(|e| at_step(e, step))?;
            (g.scalar(root), grad)
        };
        adam_step(&mut model.params, &grad, state, &settings.adam).map_err(|e| at_step(e, step))?;
        record(&mut log, &mut window, step, loss, settings.log_every, progress);
    }
    Ok(log)
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric { context, layer, .. } => Error::Numeric {
            context,
            layer,
            step: Some(step),
        },
        other => other,
    }
}

fn record(
    log: &mut LossLog,
    window: &mut (f64, usize),
    step: usize,
    loss: f64,
    every: usize,
    progress: &mut dyn FnMut(usize, f64),
) {
    window.0 += loss;
    window.1 += 1;
    if (step + 1) % every.max(1) == 0 {
        let mean = window.0 / window.1 as f64;
        log.entries.push((step + 1, mean));
        progress(step + 1, mean);
        *window = (0.0, 0);
    }
}
