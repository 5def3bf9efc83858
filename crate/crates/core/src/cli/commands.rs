//! The seven subcommands. Each one writes into its output directory and
//! finishes with a manifest, also when the run fails part way.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::diffnet::{AdamState, Checkpoint, FlowMapModel, ModelKind, NetworkSpec, VelocityField, VelocityModel};
use crate::error::{Error, Result};
use crate::interpolant::{standard_normal, Checkerboard};
use crate::metrics::{
    kl_histogram, median, mismatch_report, set_worker_cap, teacher_l2, w2_assignment, write_mismatch_csv,
    HistogramGrid, MetricReport, Subsampling, W2Config,
};
use crate::objectives::LossKind;
use crate::oracle::{oracle_flowmap_gaussian, GaussianFlowMap, GaussianVelocity};
use crate::sampler::{
    integrate_ode, invert_and_restyle, map_sample, write_samples_csv, write_scatter_png, OdeMethod, SampleMethod, SampleRun,
    TimeGrid,
};
use crate::worker_rng;

use super::config::{ExperimentConfig, TaskKind};
use super::manifest::RunManifest;
use super::suite::{one_step_l2, run_oracle_suite, velocity_rmse};
use super::train::{train_flow_map, train_velocity, FlowObjective, LossLog, TrainSettings};

/// Stream indices handed to [`worker_rng`] for each purpose.
const STREAM_INIT: usize = 1;
const STREAM_TARGET: usize = 10;
const STREAM_BASE: usize = 11;
const STREAM_LABELS: usize = 12;

pub const VELOCITY_CHECKPOINT: &str = "velocity.ckpt";
pub const FLOW_MAP_CHECKPOINT: &str = "flowmap.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    TrainVelocity,
    Distill,
    TrainFmm,
    Evaluate,
    StyleTransfer,
    OracleSuite,
    Sample,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::TrainVelocity,
        Command::Distill,
        Command::TrainFmm,
        Command::Evaluate,
        Command::StyleTransfer,
        Command::OracleSuite,
        Command::Sample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::TrainVelocity => "train-velocity",
            Command::Distill => "distill",
            Command::TrainFmm => "train-fmm",
            Command::Evaluate => "evaluate",
            Command::StyleTransfer => "style-transfer",
            Command::OracleSuite => "oracle-suite",
            Command::Sample => "sample",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::Usage(format!("unknown command `{name}`")))
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub paper_scale: bool,
    pub out: Option<PathBuf>,
}

impl RunOptions {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if self.deterministic {
            cfg.run.deterministic = true;
        }
        if self.paper_scale {
            cfg.apply_paper_scale();
        }
        if let Some(out) = &self.out {
            cfg.run.out = Some(out.to_string_lossy().into_owned());
        }
    }
}

/// Everything a command writes to.
struct Run<'a> {
    cfg: ExperimentConfig,
    dir: PathBuf,
    manifest: RunManifest,
    log: &'a mut dyn Write,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn say(&mut self, line: &str) {
        let _ = writeln!(self.log, "{line}");
    }

    fn run_id(&self) -> String {
        self.manifest.config_hash[..12].to_string()
    }
}

/// Runs one command with the given (already parsed) config. Returns the
/// manifest that was written to the output directory.
pub fn run_command(
    command: Command,
    mut cfg: ExperimentConfig,
    opts: &RunOptions,
    log: &mut dyn Write,
) -> Result<RunManifest> {
    opts.apply(&mut cfg);
    cfg.validate()?;
    if cfg.run.deterministic {
        set_worker_cap(1);
    }
    let dir = cfg.output_dir(&format!("runs/{}", command.name()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, cfg.canonical()).map_err(|e| Error::io(&config_path, e))?;
    let manifest = RunManifest::start(command.name(), cfg.hash(), cfg.run.seed, cfg.run.deterministic);
    let mut run = Run {
        cfg,
        dir,
        manifest,
        log,
    };
    let outcome = match command {
        Command::TrainVelocity => cmd_train_velocity(&mut run),
        Command::Distill => cmd_distill(&mut run),
        Command::TrainFmm => cmd_train_fmm(&mut run),
        Command::Evaluate => cmd_evaluate(&mut run),
        Command::StyleTransfer => cmd_style_transfer(&mut run),
        Command::OracleSuite => cmd_oracle_suite(&mut run),
        Command::Sample => cmd_sample(&mut run),
    };
    run.manifest.metric("status", if outcome.is_ok() { "ok" } else { "failed" });
    run.manifest.finish(&run.dir)?;
    outcome.map(|_| run.manifest)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// A checkpoint resolved against the task.
enum Model {
    Velocity(VelocityModel),
    FlowMap(FlowMapModel),
}

fn load_checkpoint(cfg: &ExperimentConfig, path: &str) -> Result<Model> {
    let ckpt = Checkpoint::load(Path::new(path))?;
    let target = cfg.target()?;
    if ckpt.dim != target.dim() || ckpt.label_count != target.label_count() {
        return Err(Error::Config(format!(
            "checkpoint {path} has dim {} and {} labels, the task needs dim {} and {} labels",
            ckpt.dim,
            ckpt.label_count,
            target.dim(),
            target.label_count()
        )));
    }
    Ok(match ckpt.kind {
        ModelKind::Velocity => Model::Velocity(ckpt.into_velocity()?),
        ModelKind::FlowMap => Model::FlowMap(ckpt.into_flow_map()?),
    })
}

fn require_gaussian(cfg: &ExperimentConfig, what: &str) -> Result<()> {
    if cfg.task.kind != TaskKind::Gaussian {
        return Err(Error::Config(format!("{what} = \"oracle\" needs the gaussian task")));
    }
    Ok(())
}

fn velocity_teacher(cfg: &ExperimentConfig, spec: &str) -> Result<Box<dyn VelocityField>> {
    if spec == "oracle" {
        require_gaussian(cfg, "teacher")?;
        return Ok(Box::new(GaussianVelocity::new(cfg.gaussian_task()?)));
    }
    match load_checkpoint(cfg, spec)? {
        Model::Velocity(m) => Ok(Box::new(m)),
        Model::FlowMap(_) => Err(Error::Config(format!("teacher {spec} is a flow map, a velocity field is needed"))),
    }
}

fn record_log(run: &mut Run<'_>, log: &LossLog) -> Result<()> {
    write_with(&run.path("loss.csv"), |w| log.write_csv(w))?;
    if let Some(&(_, last)) = log.entries.last() {
        run.manifest.metric("final_loss", last);
    }
    if let Some((head, tail)) = log.head_tail_means(0.1) {
        run.manifest.metric("loss_first_10pct", head);
        run.manifest.metric("loss_last_10pct", tail);
    }
    Ok(())
}

fn progress<'l>(log: &'l mut dyn Write, curve: &'l mut LossLog) -> impl FnMut(usize, f64) + 'l {
    move |step, loss| {
        curve.entries.push((step, loss));
        let _ = writeln!(log, "step {step} loss {loss:.6}");
    }
}

fn cmd_train_velocity(run: &mut Run<'_>) -> Result<()> {
    let cfg = &run.cfg;
    if cfg.loss_kind()? != LossKind::Velocity {
        return Err(Error::Config(format!(
            "train-velocity needs loss.kind = \"velocity\", got {}",
            cfg.loss.kind
        )));
    }
    let coupling = cfg.coupling()?;
    let spec = cfg.network_spec()?;
    let settings = cfg.train_settings()?;
    let mut model = VelocityModel::new(
        coupling.dim(),
        coupling.label_count(),
        &spec,
        &mut worker_rng(cfg.run.seed, STREAM_INIT),
    );
    let mut state = AdamState::new(&model.params);
    let mut curve = LossLog::default();
    let outcome = train_velocity(
        &mut model,
        &cfg.schedule()?,
        &coupling,
        &settings,
        &mut state,
        &mut progress(run.log, &mut curve),
    );
    Checkpoint::from_velocity(&model, Some(&state)).save(&run.path(VELOCITY_CHECKPOINT))?;
    record_log(run, &curve)?;
    outcome?;
    if run.cfg.task.kind == TaskKind::Gaussian {
        let rmse = velocity_rmse(&model, &run.cfg.gaussian_task()?, 20_000, run.cfg.run.seed)?;
        run.manifest.metric("velocity_rmse_bulk", rmse);
        run.say(&format!("velocity RMSE vs exact on the bulk: {rmse:.4e}"));
    }
    Ok(())
}

fn new_flow_map(cfg: &ExperimentConfig, spec: &NetworkSpec) -> Result<FlowMapModel> {
    let target = cfg.target()?;
    Ok(FlowMapModel::new(
        target.dim(),
        target.label_count(),
        spec,
        &mut worker_rng(cfg.run.seed, STREAM_INIT),
    ))
}

fn fit_flow_map(run: &mut Run<'_>, model: &mut FlowMapModel, objective: FlowObjective<'_>) -> Result<()> {
    run.say(&format!("training flow map on {}", objective.name()));
    let cfg = &run.cfg;
    let settings = cfg.train_settings()?;
    let mut state = AdamState::new(&model.params);
    let mut curve = LossLog::default();
    let outcome = train_flow_map(
        model,
        objective,
        &cfg.schedule()?,
        &cfg.coupling()?,
        &settings,
        &cfg.loss_options()?,
        &mut state,
        &mut progress(run.log, &mut curve),
    );
    Checkpoint::from_flow_map(model, Some(&state)).save(&run.path(FLOW_MAP_CHECKPOINT))?;
    record_log(run, &curve)?;
    outcome?;
    if run.cfg.task.kind == TaskKind::Gaussian {
        let l2 = one_step_l2(&*model, &run.cfg.gaussian_task()?)?;
        run.manifest.metric("one_step_l2_vs_exact", l2);
        run.say(&format!("one-step RMS distance to the exact map on [-3,3]^d: {l2:.4e}"));
    }
    Ok(())
}

fn cmd_distill(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.clone();
    let kind = cfg.loss_kind()?;
    let teacher = cfg.loss.teacher.clone().ok_or_else(|| Error::Config("distill needs loss.teacher".into()))?;
    let spec = cfg.network_spec()?;
    match kind {
        LossKind::Lmd | LossKind::Emd => {
            let b = velocity_teacher(&cfg, &teacher)?;
            let mut student = new_flow_map(&cfg, &spec)?;
            let objective = if kind == LossKind::Lmd {
                FlowObjective::Lmd(&*b)
            } else {
                FlowObjective::Emd(&*b)
            };
            fit_flow_map(run, &mut student, objective)
        }
        LossKind::Pfmm(k) => {
            let fresh = new_flow_map(&cfg, &spec)?;
            if teacher == "oracle" {
                require_gaussian(&cfg, "teacher")?;
                if cfg.loss.warm_start {
                    return Err(Error::Config(
                        "the analytic teacher has no parameters to warm start from (set loss.warm_start = false)".into(),
                    ));
                }
                let exact = GaussianFlowMap::new(cfg.gaussian_task()?);
                let mut student = fresh;
                return fit_flow_map(run, &mut student, FlowObjective::Pfmm { teacher: &exact, k });
            }
            let teacher_model = match load_checkpoint(&cfg, &teacher)? {
                Model::FlowMap(m) => m,
                Model::Velocity(_) => {
                    return Err(Error::Config(format!("pfmm teacher {teacher} must be a flow-map checkpoint")))
                }
            };
            let mut student = if cfg.loss.warm_start {
                if !teacher_model.params.same_shape(&fresh.params)
                    || teacher_model.params.activation != fresh.params.activation
                    || teacher_model.embedding != fresh.embedding
                {
                    return Err(Error::Config(format!(
                        "cannot warm start: teacher widths {:?} differ from the configured student {:?}",
                        teacher_model.params.widths(),
                        fresh.params.widths()
                    )));
                }
                teacher_model.clone()
            } else {
                fresh
            };
            fit_flow_map(
                run,
                &mut student,
                FlowObjective::Pfmm {
                    teacher: &teacher_model,
                    k,
                },
            )
        }
        other => Err(Error::Config(format!(
            "distill handles lmd, emd and pfmm(K); got {} (use train-velocity or train-fmm)",
            other.name()
        ))),
    }
}

fn cmd_train_fmm(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.clone();
    let objective = match cfg.loss_kind()? {
        LossKind::Fmm => FlowObjective::Fmm,
        LossKind::Ee => FlowObjective::Ee,
        LossKind::Denoiser => FlowObjective::Denoiser,
        other => {
            return Err(Error::Config(format!(
                "train-fmm handles fmm, ee and denoiser; got {}",
                other.name()
            )))
        }
    };
    let mut model = new_flow_map(&cfg, &cfg.network_spec()?)?;
    fit_flow_map(run, &mut model, objective)
}

/// Base draws and labels for generation.
fn generation_inputs(
    cfg: &ExperimentConfig,
    count: usize,
    label_count: usize,
    fixed: Option<usize>,
) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    let d = cfg.target()?.dim();
    let x0 = standard_normal(count, d, &mut worker_rng(cfg.run.seed, STREAM_BASE));
    let labels = match (label_count, fixed) {
        (0, None) => None,
        (0, Some(_)) => return Err(Error::Usage("a label was given but the model is unconditional".into())),
        (n, Some(l)) if l >= n => return Err(Error::Usage(format!("label {l} out of range for {n} classes"))),
        (_, Some(l)) => Some(vec![l; count]),
        (n, None) => {
            let mut rng = worker_rng(cfg.run.seed, STREAM_LABELS);
            Some((0..count).map(|_| rng.random_range(0..n)).collect())
        }
    };
    Ok((x0, labels))
}

fn generate(
    model: &Model,
    x0: ArrayView2<f64>,
    labels: Option<&[usize]>,
    method: SampleMethod,
    steps: usize,
) -> Result<Array2<f64>> {
    let run = SampleRun::new(method, steps, 0, x0.nrows(), None)?;
    match (model, method) {
        (Model::Velocity(b), SampleMethod::OdeHeun) => Ok(integrate_ode(b, x0, &run.grid, OdeMethod::Heun, labels, false)?.end),
        (Model::Velocity(b), SampleMethod::OdeRk4) => Ok(integrate_ode(b, x0, &run.grid, OdeMethod::Rk4, labels, false)?.end),
        (Model::FlowMap(m), SampleMethod::MapOneStep | SampleMethod::MapMultiStep) => map_sample(m, x0, &run.grid, labels),
        (Model::Velocity(_), _) => Err(Error::Usage(format!(
            "{} needs a flow-map checkpoint, this is a velocity field",
            method.name()
        ))),
        (Model::FlowMap(_), _) => Err(Error::Usage(format!(
            "{} needs a velocity checkpoint, this is a flow map",
            method.name()
        ))),
    }
}

fn model_label_count(model: &Model) -> usize {
    match model {
        Model::Velocity(m) => m.label_count,
        Model::FlowMap(m) => m.label_count,
    }
}

fn cmd_evaluate(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.clone();
    let ev = &cfg.eval;
    let path = ev.checkpoint.clone().ok_or_else(|| Error::Config("evaluate needs eval.checkpoint".into()))?;
    let model = load_checkpoint(&cfg, &path)?;
    let target = cfg.target()?;
    let d = target.dim();
    let (reference, _) = target.sample(ev.samples, &mut worker_rng(cfg.run.seed, STREAM_TARGET));
    let (x0, labels) = generation_inputs(&cfg, ev.samples, model_label_count(&model), None)?;
    let grid = HistogramGrid::square(d, -ev.kl_extent, ev.kl_extent, ev.kl_bins)?;

    let plan: Vec<(SampleMethod, usize)> = match &model {
        Model::Velocity(_) => {
            let method = match cfg.ode_method()? {
                OdeMethod::Heun => SampleMethod::OdeHeun,
                OdeMethod::Rk4 => SampleMethod::OdeRk4,
            };
            vec![(method, ev.ode_steps)]
        }
        Model::FlowMap(_) => ev
            .map_steps
            .iter()
            .map(|&n| {
                let m = if n == 1 {
                    SampleMethod::MapOneStep
                } else {
                    SampleMethod::MapMultiStep
                };
                (m, n)
            })
            .collect(),
    };

    let teacher_score = match (&model, &ev.teacher) {
        (Model::FlowMap(m), Some(spec)) => Some(teacher_agreement(run, &cfg, m, spec, &x0, labels.as_deref())?),
        _ => None,
    };

    let metrics_csv = run.path("metrics.csv");
    for (method, steps) in plan {
        run.say(&format!("sampling {} points with {} N={steps}", ev.samples, method.name()));
        let points = generate(&model, x0.view(), labels.as_deref(), method, steps)?;
        let kl = kl_histogram(reference.view(), points.view(), &grid)?;
        let w2 = w2_assignment(
            reference.view(),
            points.view(),
            &W2Config {
                n: ev.w2_n.min(ev.samples),
                repeats: ev.w2_repeats,
                subsampling: Subsampling::Independent,
                seed: cfg.run.seed,
            },
        )?;
        let report = MetricReport {
            run_id: run.run_id(),
            method: method.name().into(),
            steps,
            kl,
            w2sq: w2.mean,
            w2sq_stderr: w2.stderr,
            teacher_l2: teacher_score,
            samples: ev.samples,
            w2_n: ev.w2_n.min(ev.samples),
            w2_repeats: ev.w2_repeats,
            seed: cfg.run.seed,
        };
        report.validate()?;
        report.append_csv(&metrics_csv)?;
        let stem = format!("{}_n{steps}", method.name());
        std::fs::write(run.path(&format!("metrics_{stem}.txt")), report.to_key_value())
            .map_err(|e| Error::io(run.path(&format!("metrics_{stem}.txt")), e))?;
        let rows = ev.csv_points.min(ev.samples);
        let shown = points.slice(s![..rows, ..]);
        let shown_labels = labels.as_ref().map(|l| &l[..rows]);
        write_with(&run.path(&format!("samples_{stem}.csv")), |w| {
            write_samples_csv(w, &report.run_id, method.name(), steps, shown_labels, shown, true)
        })?;
        if ev.scatter && d == 2 {
            write_scatter_png(&run.path(&format!("samples_{stem}.png")), shown, shown_labels, ev.kl_extent)?;
        }
        run.manifest.metric(format!("kl.{stem}"), kl);
        run.manifest.metric(format!("w2sq.{stem}"), w2.mean);
        run.say(&format!("{} N={steps}: KL={kl:.4} W2^2={:.4}±{:.4}", method.name(), w2.mean, w2.stderr));
    }
    Ok(())
}

/// Teacher `L₂` and the mismatch table on the first `teacher_points` base draws.
fn teacher_agreement(
    run: &mut Run<'_>,
    cfg: &ExperimentConfig,
    student: &FlowMapModel,
    spec: &str,
    x0: &Array2<f64>,
    labels: Option<&[usize]>,
) -> Result<f64> {
    let n = cfg.eval.teacher_points.min(x0.nrows());
    let x = x0.slice(s![..n, ..]);
    let labels = labels.map(|l| &l[..n]);
    let endpoint = if spec == "oracle" {
        require_gaussian(cfg, "eval.teacher")?;
        oracle_flowmap_gaussian(&cfg.gaussian_task()?, 0.0, 1.0, x)?
    } else {
        let b = velocity_teacher(cfg, spec)?;
        let grid = TimeGrid::uniform(0.0, 1.0, cfg.eval.ode_steps)?;
        integrate_ode(&*b, x, &grid, cfg.ode_method()?, labels, false)?.end
    };
    let score = teacher_l2(student, |_| Ok(endpoint.clone()), x, labels)?;
    let rows = mismatch_report(student, |_| Ok(endpoint), x, labels, cfg.eval.mismatch_threshold)?;
    write_with(&run.path("mismatch.csv"), |w| write_mismatch_csv(w, &rows))?;
    let exceeding = rows.iter().filter(|r| r.exceeds).count();
    run.manifest.metric("teacher_l2", score);
    run.manifest.metric("mismatch_fraction", exceeding as f64 / n as f64);
    run.say(&format!("teacher L2 {score:.4e}, {exceeding} of {n} points beyond the mismatch threshold"));
    Ok(score)
}

fn cmd_sample(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.clone();
    let sc = &cfg.sample;
    let path = sc.checkpoint.clone().ok_or_else(|| Error::Config("sample needs sample.checkpoint".into()))?;
    let model = load_checkpoint(&cfg, &path)?;
    let method = SampleMethod::parse(&sc.method)?;
    let (x0, labels) = generation_inputs(&cfg, sc.count, model_label_count(&model), sc.label)?;
    let points = generate(&model, x0.view(), labels.as_deref(), method, sc.steps)?;
    write_with(&run.path("samples.csv"), |w| {
        write_samples_csv(w, &run.run_id(), method.name(), sc.steps, labels.as_deref(), points.view(), true)
    })?;
    if sc.scatter && points.ncols() == 2 {
        write_scatter_png(&run.path("samples.png"), points.view(), labels.as_deref(), sc.extent)?;
    }
    run.manifest.metric("count", sc.count);
    run.say(&format!("wrote {} samples ({} N={})", sc.count, method.name(), sc.steps));
    Ok(())
}

fn cmd_style_transfer(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.clone();
    let st = &cfg.style;
    let path = st.checkpoint.clone().ok_or_else(|| Error::Config("style-transfer needs style.checkpoint".into()))?;
    let model = match Checkpoint::load(Path::new(&path))? {
        c if c.kind == ModelKind::FlowMap => c.into_flow_map()?,
        _ => return Err(Error::Usage("style transfer needs a flow-map checkpoint".into())),
    };
    if model.label_count < 2 {
        return Err(Error::Usage(format!(
            "style transfer needs a class-conditional model, {path} has {} classes",
            model.label_count
        )));
    }
    if model.dim != 2 {
        return Err(Error::Usage("style transfer runs on the 2D checkerboard".into()));
    }
    let board = Checkerboard::default();
    let mut rng = worker_rng(cfg.run.seed, STREAM_TARGET);
    let mut before = Array2::zeros((st.count, 2));
    for mut row in before.rows_mut() {
        let p = board.sample_class(st.label, &mut rng);
        row[0] = p[0];
        row[1] = p[1];
    }
    let restyle = |to: usize| {
        invert_and_restyle(
            &model,
            before.view(),
            st.label,
            to,
            st.s_prime,
            st.backward_steps,
            st.forward_steps,
        )
    };
    let after = restyle(st.new_label)?;
    let cycled = restyle(st.label)?;
    let classes: Vec<Option<usize>> = after.rows().into_iter().map(|p| board.class_of(p)).collect();
    let hits = classes.iter().filter(|c| **c == Some(st.new_label)).count();
    let cycle: Vec<f64> = cycled
        .rows()
        .into_iter()
        .zip(before.rows())
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .collect();
    let fraction = hits as f64 / st.count as f64;
    let cycle_median = median(&cycle);

    write_with(&run.path("style.csv"), |w| {
        writeln!(w, "before_0,before_1,label,after_0,after_1,new_label,after_class,cycle_0,cycle_1,cycle_error")?;
        for i in 0..st.count {
            let class = classes[i].map_or(String::new(), |c| c.to_string());
            writeln!(
                w,
                "{},{},{},{},{},{},{class},{},{},{}",
                before[[i, 0]],
                before[[i, 1]],
                st.label,
                after[[i, 0]],
                after[[i, 1]],
                st.new_label,
                cycled[[i, 0]],
                cycled[[i, 1]],
                cycle[i]
            )?;
        }
        Ok(())
    })?;
    let extent = cfg.sample.extent;
    write_scatter_png(&run.path("before.png"), before.view(), Some(&vec![st.label; st.count]), extent)?;
    let after_colors: Vec<usize> = classes.iter().map(|c| c.unwrap_or(5)).collect();
    write_scatter_png(&run.path("after.png"), after.view(), Some(&after_colors), extent)?;
    std::fs::write(
        run.path("style_summary.txt"),
        format!(
            "label={}\nnew_label={}\ns_prime={}\ncount={}\nin_new_class_fraction={fraction}\ncycle_median_error={cycle_median}\n",
            st.label, st.new_label, st.s_prime, st.count
        ),
    )
    .map_err(|e| Error::io(run.path("style_summary.txt"), e))?;
    run.manifest.metric("in_new_class_fraction", fraction);
    run.manifest.metric("cycle_median_error", cycle_median);
    run.say(&format!(
        "{:.1}% of restyled points in class {}, median cycle error {cycle_median:.4}",
        100.0 * fraction,
        st.new_label
    ));
    Ok(())
}

fn cmd_oracle_suite(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg.clone();
    let task = cfg.gaussian_task()?;
    let settings = TrainSettings {
        steps: cfg.oracle.denoiser_steps,
        ..cfg.train_settings()?
    };
    let spec = cfg.network_spec()?;
    let checks = run_oracle_suite(
        &task,
        &cfg.loss_options()?,
        cfg.oracle.samples,
        cfg.oracle.bound_seeds,
        cfg.oracle.perturbation,
        (cfg.oracle.denoiser_steps > 0).then_some((&spec, &settings)),
        cfg.run.seed,
    )?;
    let report: String = checks.iter().map(|c| format!("{c}\n")).collect();
    std::fs::write(run.path("oracle_suite.txt"), &report).map_err(|e| Error::io(run.path("oracle_suite.txt"), e))?;
    let _ = run.log.write_all(report.as_bytes());
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    run.manifest.metric("checks", checks.len());
    run.manifest.metric("failed", failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Acceptance(format!(
            "{} of {} oracle checks failed: {}",
            failed.len(),
            checks.len(),
            failed.join("; ")
        )))
    }
}
