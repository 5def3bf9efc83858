//! Experiment configuration.
//!
//! A config file is a flat list of `key = value` lines grouped under
//! `[section]` headers (a subset of TOML). Every key is optional; missing keys
//! take the defaults below, unknown keys are rejected. The canonical form is
//! the full serialization with every key present, in a fixed order, so two
//! files that differ only in key order hash to the same value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffnet::{Activation, AdamConfig, NetworkSpec, TimeEmbedding};
use crate::error::{Error, Result};
use crate::interpolant::{Checkerboard, Coupling, Density, InterpolantSchedule, ScheduleKind, TimeWeight};
use crate::objectives::{LossKind, LossOptions, TimeDerivative};
use crate::oracle::GaussianTask;
use crate::sampler::{OdeMethod, SampleMethod};

use super::train::TrainSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Checkerboard,
    #[serde(rename = "checkerboard-2class")]
    Checkerboard2Class,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub kind: TaskKind,
    /// Gaussian task only.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for TaskSection {
    fn default() -> Self {
        let g = GaussianTask::default();
        TaskSection {
            kind: TaskKind::Checkerboard,
            mean: g.mean,
            std: g.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpolantSection {
    pub schedule: String,
    pub ve_horizon: f64,
    pub coupling: String,
    pub weight: String,
}

impl Default for InterpolantSection {
    fn default() -> Self {
        InterpolantSection {
            schedule: "linear".into(),
            ve_horizon: crate::interpolant::DEFAULT_VE_HORIZON,
            coupling: "independent".into(),
            weight: "uniform-square".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub activation: String,
    pub frequencies: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: vec![128; 3],
            activation: "gelu".into(),
            frequencies: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: f64,
    pub decay_every: u64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimizerSection {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            decay: a.decay,
            decay_every: a.decay_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub kind: String,
    /// Relative weight of the invertibility term of flow map matching.
    pub fmm_lambda: f64,
    /// `exact`, or `fd` for a central difference with `fd_step`.
    pub time_derivative: String,
    pub fd_step: f64,
    /// Teacher checkpoint (velocity for lmd/emd, flow map for pfmm), or
    /// `oracle` for the Gaussian task's exact velocity.
    pub teacher: Option<String>,
    /// Initialize a pfmm student from the teacher's parameters.
    pub warm_start: bool,
    /// Mutation-test hook for the oracle suite.
    pub flip_emd_direction: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            kind: "velocity".into(),
            fmm_lambda: 1.0,
            time_derivative: "exact".into(),
            fd_step: 1e-4,
            teacher: None,
            warm_start: true,
            flip_emd_direction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 20_000,
            batch_size: 256,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub checkpoint: Option<String>,
    /// Velocity checkpoint (or `oracle`) used for teacher agreement.
    pub teacher: Option<String>,
    /// Step counts for flow-map sampling.
    pub map_steps: Vec<usize>,
    pub ode_method: String,
    pub ode_steps: usize,
    pub samples: usize,
    pub kl_bins: usize,
    pub kl_extent: f64,
    pub w2_n: usize,
    pub w2_repeats: usize,
    pub mismatch_threshold: f64,
    pub teacher_points: usize,
    /// Rows written to each sample CSV.
    pub csv_points: usize,
    pub scatter: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            checkpoint: None,
            teacher: None,
            map_steps: vec![1, 4],
            ode_method: "heun".into(),
            ode_steps: 80,
            samples: 200_000,
            kl_bins: 64,
            kl_extent: 4.5,
            w2_n: 512,
            w2_repeats: 8,
            mismatch_threshold: 1.0,
            teacher_points: 10_000,
            csv_points: 20_000,
            scatter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub checkpoint: Option<String>,
    pub method: String,
    pub steps: usize,
    pub count: usize,
    pub label: Option<usize>,
    pub extent: f64,
    pub scatter: bool,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            checkpoint: None,
            method: "map-multistep".into(),
            steps: 4,
            count: 10_000,
            label: None,
            extent: 4.5,
            scatter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleSection {
    pub checkpoint: Option<String>,
    pub s_prime: f64,
    pub label: usize,
    pub new_label: usize,
    pub backward_steps: usize,
    pub forward_steps: usize,
    pub count: usize,
}

impl Default for StyleSection {
    fn default() -> Self {
        StyleSection {
            checkpoint: None,
            s_prime: 0.3,
            label: 0,
            new_label: 1,
            backward_steps: 8,
            forward_steps: 8,
            count: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    /// Loss and pushforward sample count for zero-at-truth and bound checks.
    pub samples: usize,
    pub bound_seeds: usize,
    /// Amplitude of the random perturbations in the bound audit.
    pub perturbation: f64,
    pub denoiser_steps: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            samples: 4096,
            bound_seeds: 20,
            perturbation: 0.1,
            denoiser_steps: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out: Option<String>,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: TaskSection,
    pub interpolant: InterpolantSection,
    pub network: NetworkSection,
    pub optimizer: OptimizerSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sample: SampleSection,
    pub style: StyleSection,
    pub oracle: OracleSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Full serialization with every key present.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Hex SHA-256 of the canonical form, with the output directory left out
    /// so that reruns elsewhere share a hash.
    pub fn hash(&self) -> String {
        let mut placeless = self.clone();
        placeless.run.out = None;
        hex::encode(Sha256::digest(placeless.canonical().as_bytes()))
    }

    /// The 6 × 512 network and 5 × 10⁴ steps.
    pub fn apply_paper_scale(&mut self) {
        self.network.hidden = NetworkSpec::paper_scale().hidden;
        self.train.steps = 50_000;
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.weight()?;
        self.network_spec()?;
        self.loss_kind()?;
        self.loss_options()?;
        self.ode_method()?;
        SampleMethod::parse(&self.sample.method)?;
        if self.interpolant.coupling != "independent" {
            return Err(Error::Config(format!(
                "unsupported coupling `{}` (only `independent` is available from a config)",
                self.interpolant.coupling
            )));
        }
        if self.task.kind == TaskKind::Gaussian {
            GaussianTask::new(self.task.mean.clone(), self.task.std.clone())?;
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        let kind = self.loss_kind()?;
        if matches!(kind, LossKind::Lmd | LossKind::Emd | LossKind::Pfmm(_)) && self.loss.teacher.is_none() {
            return Err(Error::Config(format!("loss kind {} needs loss.teacher", kind.name())));
        }
        if kind == LossKind::Fmm && !self.weight()?.is_symmetric() {
            return Err(Error::Config(format!(
                "loss kind fmm needs a symmetric weight, got {}",
                self.interpolant.weight
            )));
        }
        if self.eval.map_steps.contains(&0) || self.eval.ode_steps == 0 {
            return Err(Error::Config("evaluation step counts must be positive".into()));
        }
        if self.eval.kl_bins < 2 || !(self.eval.kl_extent > 0.0) {
            return Err(Error::Config("eval.kl_bins ≥ 2 and eval.kl_extent > 0 required".into()));
        }
        if !(self.style.s_prime > 0.0 && self.style.s_prime < 1.0) {
            return Err(Error::Config("style.s_prime must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<InterpolantSchedule> {
        Ok(match ScheduleKind::parse(&self.interpolant.schedule)? {
            ScheduleKind::Linear => InterpolantSchedule::linear(),
            ScheduleKind::Trig => InterpolantSchedule::trig(),
            ScheduleKind::VpDiffusion => InterpolantSchedule::vp_diffusion(),
            ScheduleKind::VeDiffusion => InterpolantSchedule::ve_diffusion(self.interpolant.ve_horizon),
            ScheduleKind::Custom => {
                return Err(Error::Config("custom schedules are only available through the library".into()))
            }
        })
    }

    pub fn weight(&self) -> Result<TimeWeight> {
        TimeWeight::parse(&self.interpolant.weight)
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(Error::Config("network.hidden needs positive widths".into()));
        }
        if self.network.frequencies == 0 {
            return Err(Error::Config("network.frequencies must be positive".into()));
        }
        Ok(NetworkSpec {
            hidden: self.network.hidden.clone(),
            activation: Activation::parse(&self.network.activation)?,
            embedding: TimeEmbedding {
                frequencies: self.network.frequencies,
            },
        })
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        let kind = LossKind::parse(&self.loss.kind)?;
        if let LossKind::Pfmm(k) = kind {
            if k < 2 {
                return Err(Error::Config("pfmm needs K ≥ 2".into()));
            }
        }
        Ok(kind)
    }

    pub fn loss_options(&self) -> Result<LossOptions> {
        let time_derivative = match self.loss.time_derivative.as_str() {
            "exact" => TimeDerivative::Exact,
            "fd" if self.loss.fd_step > 0.0 => TimeDerivative::FiniteDifference(self.loss.fd_step),
            other => return Err(Error::Config(format!("bad loss.time_derivative `{other}`"))),
        };
        Ok(LossOptions {
            fmm_invertibility_weight: self.loss.fmm_lambda,
            time_derivative,
            flip_emd_direction: self.loss.flip_emd_direction,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        let o = &self.optimizer;
        AdamConfig {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            decay: o.decay,
            decay_every: o.decay_every,
        }
    }

    pub fn train_settings(&self) -> Result<TrainSettings> {
        Ok(TrainSettings {
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            weight: self.weight()?,
            adam: self.adam(),
            log_every: self.train.log_every,
            seed: self.run.seed,
        })
    }

    pub fn ode_method(&self) -> Result<OdeMethod> {
        match self.eval.ode_method.as_str() {
            "heun" => Ok(OdeMethod::Heun),
            "rk4" => Ok(OdeMethod::Rk4),
            other => Err(Error::Config(format!("unknown eval.ode_method `{other}`"))),
        }
    }

    pub fn gaussian_task(&self) -> Result<GaussianTask> {
        GaussianTask::new(self.task.mean.clone(), self.task.std.clone())
    }

    /// Target density of the task.
    pub fn target(&self) -> Result<Density> {
        Ok(match self.task.kind {
            TaskKind::Checkerboard => Density::Checkerboard {
                board: Checkerboard::default(),
                labeled: false,
            },
            TaskKind::Checkerboard2Class => Density::Checkerboard {
                board: Checkerboard::default(),
                labeled: true,
            },
            TaskKind::Gaussian => self.gaussian_task()?.target(),
        })
    }

    pub fn coupling(&self) -> Result<Coupling> {
        let target = self.target()?;
        Coupling::independent(Density::StandardNormal { dim: target.dim() }, target)
    }

    pub fn output_dir(&self, default: &str) -> PathBuf {
        PathBuf::from(self.run.out.clone().unwrap_or_else(|| default.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let text = "[loss]\nkind = \"pfmm(5)\"\nteacher = \"a.ckpt\"\n[interpolant]\nweight = \"strip(4)\"\n";
        let a = ExperimentConfig::parse(text).unwrap();
        let b = ExperimentConfig::parse(&a.canonical()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.canonical(), b.canonical());
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = ExperimentConfig::parse("[train]\nsteps = 10\nbatch_size = 8\n[run]\nseed = 3\n").unwrap();
        let b = ExperimentConfig::parse("[run]\nseed = 3\n[train]\nbatch_size = 8\nsteps = 10\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse("[train]\nsteps = 11\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in [
            "[train]\nstepz = 3\n",
            "[loss]\nkind = \"lmd\"\n",
            "[loss]\nkind = \"fmm\"\n[interpolant]\nweight = \"forward-only\"\n",
            "[interpolant]\nweight = \"strip(0)\"\n",
            "[task]\nkind = \"gaussian\"\nstd = [1.0, -1.0]\n",
            "[network]\nactivation = \"relu\"\n",
            "[train]\nsteps = \"many\"\n",
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }
}
