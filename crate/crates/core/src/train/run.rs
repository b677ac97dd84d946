//! Training loops: supervised teacher pretraining and student distillation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{sgd_step, Optimizer};
use crate::dataset::{Dataset, Split};
use crate::distill::{
    a2d_step, ab_loss, aver_mkd_target, kd_loss, task_loss, DiagnosticsWriter, DistillMode, DistillPlan,
    LossVariant, Tap,
};
use crate::error::{Error, Result};
use crate::nn::layers::{conv, init_conv};
use crate::nn::{forward_with, load_checkpoint, save_checkpoint, Checkpoint, Graph, ModelSpec, Network, ParameterSet};
use crate::rng;
use crate::spectral::SpectralConfig;
use crate::tensor::Tensor;

const PROJ: &str = "proj";
const METRICS_FILE: &str = "metrics.csv";
const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub task_term: f64,
    pub kd_term: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Task loss on the train and val splits before the first update.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    /// Distillation term on the train split before the first update, for
    /// runs with teachers.
    pub initial_kd: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Directory of the best-validation checkpoint.
    pub checkpoint: PathBuf,
}

impl RunRecord {
    /// `(epoch, train_loss, val_loss)` per epoch; the timing-free part of
    /// the trace.
    pub fn loss_trace(&self) -> Vec<(usize, f64, f64)> {
        self.epochs.iter().map(|e| (e.epoch, e.train_loss, e.val_loss)).collect()
    }
}

/// Where a run writes and how it starts.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub run_dir: PathBuf,
    /// Continue from `checkpoints/last` when present.
    pub resume: bool,
    /// Initial weights instead of a fresh seeded initialization.
    pub init: Option<ParameterSet>,
    /// Stop after this many epochs in this invocation, as if interrupted.
    pub stop_after: Option<usize>,
}

impl RunOptions {
    pub fn new(run_dir: impl Into<PathBuf>) -> Self {
        Self {
            run_dir: run_dir.into(),
            ..Self::default()
        }
    }

    pub fn best_dir(&self) -> PathBuf {
        self.run_dir.join("checkpoints").join("best")
    }

    pub fn last_dir(&self) -> PathBuf {
        self.run_dir.join("checkpoints").join("last")
    }
}

/// Teacher features for every training sample, computed once.
enum Targets {
    None,
    Shared(Tensor),
    PerTeacher(Vec<Tensor>),
}

struct Objective<'a> {
    plan: Option<&'a DistillPlan>,
    targets: Targets,
    spectral: Option<SpectralConfig>,
    projection: bool,
}

struct StepOut {
    task: f64,
    kd: f64,
    grad: ParameterSet,
    a2d: Option<crate::distill::A2DStep>,
}

/// Stage-one training of a teacher on the plain task loss.
pub fn pretrain_teacher(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig, opts: &RunOptions) -> Result<RunRecord> {
    let objective = Objective {
        plan: None,
        targets: Targets::None,
        spectral: None,
        projection: false,
    };
    run(spec, data, cfg, objective, opts)
}

/// Supervised training without a teacher; the undistilled baseline.
pub fn train_baseline(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig, opts: &RunOptions) -> Result<RunRecord> {
    pretrain_teacher(spec, data, cfg, opts)
}

/// Train a student against frozen teachers according to `plan`.
pub fn distill_student(
    spec: &ModelSpec,
    teachers: &[Network],
    data: &Dataset,
    plan: &DistillPlan,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<RunRecord> {
    let m = teachers.len();
    let counted = DistillPlan {
        teachers: vec![PathBuf::new(); m],
        ..plan.clone()
    };
    counted.validate()?;
    let (x_train, _) = data.stacked(Split::Train)?;
    let mut feats = Vec::with_capacity(m);
    for t in teachers {
        if t.spec().in_channels() != spec.in_channels() || t.spec().out_channels() != spec.out_channels() {
            return Err(Error::Shape(format!(
                "teacher {} and student {} disagree on input/output channels",
                t.spec().kind.name(),
                spec.kind.name()
            )));
        }
        let (out, lat) = t.predict_batched_with_latent(&x_train, cfg.batch_size)?;
        feats.push(match plan.tap {
            Tap::Output => out,
            Tap::Latent => lat,
        });
    }
    let student_feat_shape = match plan.tap {
        Tap::Output => vec![spec.out_channels(), spec.height, spec.width],
        Tap::Latent => {
            let (h, w) = spec.latent_grid();
            let probe = Network::new(spec.clone(), 0)?;
            let (_, lat) = probe.predict_with_latent(&Tensor::zeros(&[1, spec.in_channels(), spec.height, spec.width]))?;
            debug_assert_eq!(&lat.shape()[2..], &[h, w]);
            lat.shape()[1..].to_vec()
        }
    };
    let teacher_shape = feats[0].shape()[1..].to_vec();
    if feats.iter().any(|f| f.shape()[1..] != teacher_shape[..]) {
        return Err(Error::Shape("teachers disagree on the tapped feature shape".into()));
    }
    if teacher_shape[1..] != student_feat_shape[1..] {
        return Err(Error::Shape(format!(
            "tap-shape mismatch: student feature {:?} vs teacher feature {:?}",
            student_feat_shape, teacher_shape
        )));
    }
    let projection = teacher_shape[0] != student_feat_shape[0];
    if projection && plan.tap == Tap::Output {
        return Err(Error::Shape("output tap with mismatched channels".into()));
    }
    let (h, w) = (teacher_shape[1], teacher_shape[2]);
    let spectral = match plan.cutoff {
        Some(c) => SpectralConfig::new(c, h, w)?,
        None => SpectralConfig::with_default_cutoff(h, w)?,
    };
    let targets = match plan.mode {
        DistillMode::Single => Targets::Shared(feats.pop().expect("one teacher")),
        DistillMode::AverMkd => Targets::Shared(aver_mkd_target(&feats)?),
        DistillMode::Aekd => Targets::PerTeacher(feats),
    };
    let objective = Objective {
        plan: Some(plan),
        targets,
        spectral: Some(spectral),
        projection,
    };
    if projection {
        info!(
            "latent tap: projecting {} student channels onto {} teacher channels",
            student_feat_shape[0], teacher_shape[0]
        );
    }
    let mut opts = opts.clone();
    if projection {
        let mut init = match opts.init.take() {
            Some(p) => p,
            None => Network::new(spec.clone(), cfg.seed)?.into_params(),
        };
        let mut r = rng::stream(cfg.seed, &[rng::tag::PARAM_INIT, u64::from(b'p')]);
        init_conv(&mut init, PROJ, student_feat_shape[0], teacher_shape[0], 1, &mut r);
        opts.init = Some(init);
    }
    run(spec, data, cfg, objective, &opts)
}

/// Task MSE of `spec` with weights `params` over a whole split.
pub fn evaluate_loss(spec: &ModelSpec, params: &ParameterSet, x: &Tensor, y: &Tensor, batch: usize) -> Result<f64> {
    let n = x.shape()[0];
    if n == 0 {
        return Err(Error::Config("cannot evaluate on an empty split".into()));
    }
    let mut sse = 0.0;
    for start in (0..n).step_by(batch) {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let mut g = Graph::new();
        let xv = g.input(x.gather_axis0(&idx));
        let out = forward_with(spec, params, &mut g, xv)?;
        sse += g.value(out.output).sub(&y.gather_axis0(&idx))?.sum_sq();
    }
    Ok(sse / y.numel() as f64)
}

fn distill_term(plan: &DistillPlan, spectral: &SpectralConfig, s: &Tensor, t: &Tensor) -> Result<(f64, Tensor)> {
    match plan.loss_variant {
        LossVariant::MseFeature => {
            let k = kd_loss(s, t, plan.alpha_kd, spectral)?;
            Ok((k.value, k.grad))
        }
        LossVariant::Ab => {
            let l = ab_loss(s, t, plan.margin)?;
            Ok((l.value, l.grad))
        }
    }
}

fn batch_step(
    spec: &ModelSpec,
    params: &ParameterSet,
    objective: &Objective,
    x: &Tensor,
    y: &Tensor,
    idx: &[usize],
) -> Result<StepOut> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = forward_with(spec, params, &mut g, xv)?;
    let task = task_loss(g.value(out.output), y)?;
    let (Some(plan), Some(spectral)) = (objective.plan, objective.spectral.as_ref()) else {
        let grads = g.backward(&[(out.output, task.grad)])?;
        return Ok(StepOut {
            task: task.value,
            kd: 0.0,
            grad: g.param_grads(&grads, params),
            a2d: None,
        });
    };
    let feat = match plan.tap {
        Tap::Output => out.output,
        Tap::Latent if objective.projection => conv(&mut g, params, PROJ, out.latent, 1)?,
        Tap::Latent => out.latent,
    };
    let lambda = plan.lambda;
    // Seeds for `task + lambda * kd` given the kd gradient at the tap.
    let seeds = |kd_grad: Tensor| -> Result<Vec<(crate::nn::Var, Tensor)>> {
        if lambda == 0.0 {
            return Ok(vec![(out.output, task.grad.clone())]);
        }
        let scaled = kd_grad.scale(lambda);
        Ok(if feat == out.output {
            vec![(out.output, task.grad.add(&scaled)?)]
        } else {
            vec![(out.output, task.grad.clone()), (feat, scaled)]
        })
    };
    let student_feat = g.value(feat).clone();
    match &objective.targets {
        Targets::None => unreachable!("distillation objective without targets"),
        Targets::Shared(all) => {
            let (kd, kd_grad) = distill_term(plan, spectral, &student_feat, &all.gather_axis0(idx))?;
            let grads = g.backward(&seeds(kd_grad)?)?;
            Ok(StepOut {
                task: task.value,
                kd,
                grad: g.param_grads(&grads, params),
                a2d: None,
            })
        }
        Targets::PerTeacher(per) => {
            let mut pairs = Vec::with_capacity(per.len());
            let mut kds = Vec::with_capacity(per.len());
            for t in per {
                let (kd, kd_grad) = distill_term(plan, spectral, &student_feat, &t.gather_axis0(idx))?;
                let grads = g.backward(&seeds(kd_grad)?)?;
                pairs.push((task.value + lambda * kd, g.param_grads(&grads, params)));
                kds.push(kd);
            }
            let step = a2d_step(&pairs, &plan.a2d)?;
            let kd = step.alpha.iter().zip(&kds).map(|(a, k)| a * k).sum();
            Ok(StepOut {
                task: task.value,
                kd,
                grad: step.combined_grad.clone(),
                a2d: Some(step),
            })
        }
    }
}

/// Mean distillation term over the train split, without updating.
fn initial_kd(
    spec: &ModelSpec,
    params: &ParameterSet,
    objective: &Objective,
    x: &Tensor,
    batch: usize,
) -> Result<Option<f64>> {
    let (Some(plan), Some(spectral)) = (objective.plan, objective.spectral.as_ref()) else {
        return Ok(None);
    };
    let targets: Vec<&Tensor> = match &objective.targets {
        Targets::None => return Ok(None),
        Targets::Shared(t) => vec![t],
        Targets::PerTeacher(ts) => ts.iter().collect(),
    };
    let n = x.shape()[0];
    let (mut acc, mut count) = (0.0, 0.0);
    for start in (0..n).step_by(batch) {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let mut g = Graph::new();
        let xv = g.input(x.gather_axis0(&idx));
        let out = forward_with(spec, params, &mut g, xv)?;
        let feat = match plan.tap {
            Tap::Output => out.output,
            Tap::Latent if objective.projection => conv(&mut g, params, PROJ, out.latent, 1)?,
            Tap::Latent => out.latent,
        };
        for t in &targets {
            acc += distill_term(plan, spectral, g.value(feat), &t.gather_axis0(&idx))?.0;
            count += 1.0;
        }
    }
    Ok(Some(acc / count))
}

fn strip_projection(params: &ParameterSet) -> (ParameterSet, ParameterSet) {
    let mut model = ParameterSet::new();
    let mut head = ParameterSet::new();
    for (k, v) in params.iter() {
        match k.strip_prefix("proj.") {
            Some(rest) => head.insert(rest, v.clone()),
            None => model.insert(k.clone(), v.clone()),
        }
    }
    (model, head)
}

#[derive(Serialize, Deserialize)]
struct Progress {
    next_epoch: usize,
    best_epoch: usize,
    best_val_loss: f64,
    initial_train_loss: f64,
    initial_val_loss: f64,
    initial_kd: Option<f64>,
    history: Vec<EpochRecord>,
    stopped: bool,
}

fn checkpoint_of(spec: &ModelSpec, params: &ParameterSet, progress: &Progress) -> Result<Checkpoint> {
    let (model, head) = strip_projection(params);
    let mut ck = Checkpoint::new(spec.clone(), model);
    if !head.is_empty() {
        ck.aux.insert(PROJ.to_string(), head);
    }
    ck.meta = serde_json::to_value(progress).map_err(|e| Error::Format(e.to_string()))?;
    Ok(ck)
}

/// Checkpoints waiting to be written. Disk writes are batched because
/// rewriting a few hundred tensor files every epoch can cost more than
/// the epoch itself on slow storage.
struct Pending<'a> {
    spec: &'a ModelSpec,
    opts: &'a RunOptions,
    best: Option<ParameterSet>,
    last_dirty: bool,
}

impl Pending<'_> {
    fn flush(&mut self, params: &ParameterSet, opt: &Optimizer, progress: &Progress) -> Result<()> {
        if let Some(best) = self.best.take() {
            save_checkpoint(&self.opts.best_dir(), &checkpoint_of(self.spec, &best, progress)?)?;
        }
        if std::mem::take(&mut self.last_dirty) {
            let mut ck = checkpoint_of(self.spec, params, progress)?;
            let (step, groups) = opt.state();
            ck.aux.extend(groups);
            ck.step = step;
            save_checkpoint(&self.opts.last_dir(), &ck)?;
        }
        Ok(())
    }

    /// On a failed run: keep the best weights, leave `last` as it was.
    fn flush_best(&mut self, progress: &Progress) -> Result<()> {
        match self.best.take() {
            Some(best) => save_checkpoint(&self.opts.best_dir(), &checkpoint_of(self.spec, &best, progress)?),
            None => Ok(()),
        }
    }
}

fn write_metrics(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss,task_term,kd_term,wall_s\n");
    for e in history {
        writeln!(
            text,
            "{},{:e},{:e},{:e},{:e},{:.3}",
            e.epoch, e.train_loss, e.val_loss, e.task_term, e.kd_term, e.wall_s
        )
        .expect("write to string");
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig, objective: Objective, opts: &RunOptions) -> Result<RunRecord> {
    cfg.validate()?;
    spec.validate()?;
    let (x_train, y_train) = data.stacked(Split::Train)?;
    let (x_val, y_val) = data.stacked(Split::Val)?;
    let n = x_train.shape()[0];
    if n == 0 || x_val.shape()[0] == 0 {
        return Err(Error::Config("training needs non-empty train and val splits".into()));
    }
    fs::create_dir_all(&opts.run_dir).map_err(|e| Error::io(&opts.run_dir, e))?;
    let metrics_path = opts.run_dir.join(METRICS_FILE);
    let snapshot = serde_json::json!({ "model": spec, "train": cfg, "distill": objective.plan });
    let snapshot_path = opts.run_dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(&snapshot).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&snapshot_path, text + "\n").map_err(|e| Error::io(&snapshot_path, e))?;

    let mut params = match &opts.init {
        Some(p) => p.clone(),
        None => Network::new(spec.clone(), cfg.seed)?.into_params(),
    };
    // Validate the model part of the initial weights against the spec.
    Network::from_parts(spec.clone(), strip_projection(&params).0)?;
    let mut opt = Optimizer::new(cfg, &params);

    let mut progress = if opts.resume && opts.last_dir().join("manifest.json").exists() {
        let ck = load_checkpoint(&opts.last_dir())?;
        if &ck.spec != spec {
            return Err(Error::Checkpoint("resume checkpoint was written for a different model".into()));
        }
        let mut restored = ck.params.clone();
        if let Some(head) = ck.aux.get(PROJ) {
            restored.merge_prefixed("proj.", head);
        }
        if restored.len() != params.len() {
            return Err(Error::Checkpoint("resume checkpoint does not match the run's parameters".into()));
        }
        params = restored;
        opt.restore(ck.step, &ck.aux)?;
        let p: Progress = serde_json::from_value(ck.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        info!("resuming {} at epoch {}", opts.run_dir.display(), p.next_epoch);
        p
    } else {
        let initial_train_loss = evaluate_loss(spec, &params, &x_train, &y_train, cfg.batch_size)?;
        let initial_val_loss = evaluate_loss(spec, &params, &x_val, &y_val, cfg.batch_size)?;
        let initial_kd = initial_kd(spec, &params, &objective, &x_train, cfg.batch_size)?;
        Progress {
            next_epoch: 0,
            initial_kd,
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
            initial_train_loss,
            initial_val_loss,
            history: Vec::new(),
            stopped: false,
        }
    };

    let mut diagnostics = match &objective.targets {
        Targets::PerTeacher(per) => {
            let path = opts.run_dir.join("a2d.csv");
            Some(if progress.next_epoch > 0 && path.exists() {
                DiagnosticsWriter::append(&path, per.len())?
            } else {
                DiagnosticsWriter::create(&path, per.len())?
            })
        }
        _ => None,
    };
    let literal_sgd = objective.plan.is_some_and(|p| p.literal_sgd && p.mode == DistillMode::Aekd);
    let lambda = objective.plan.map_or(0.0, |p| p.lambda);
    let steps_per_epoch = n.div_ceil(cfg.batch_size) as u64;

    let mut pending = Pending {
        spec,
        opts,
        best: None,
        last_dirty: false,
    };
    let mut ran = 0;
    while progress.next_epoch < cfg.epochs && !progress.stopped {
        if opts.stop_after.is_some_and(|s| ran >= s) {
            break;
        }
        let epoch = progress.next_epoch;
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[rng::tag::BATCH_ORDER, epoch as u64]));
        let (mut task_sum, mut kd_sum, mut total_sum) = (0.0, 0.0, 0.0);
        let mut batches = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = x_train.gather_axis0(idx);
            let y = y_train.gather_axis0(idx);
            let mut out = batch_step(spec, &params, &objective, &x, &y, idx)?;
            let total = out.task + lambda * out.kd;
            if !total.is_finite() {
                pending.flush_best(&progress)?;
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {b}; last checkpoint kept in {}",
                    opts.last_dir().display()
                )));
            }
            let global_step = epoch as u64 * steps_per_epoch + b as u64;
            if cfg.alternate_branches {
                let frozen = if global_step % 2 == 0 { ".attn." } else { ".conv." };
                for (name, t) in out.grad.iter_mut() {
                    if name.contains(frozen) {
                        *t = Tensor::zeros(t.shape());
                    }
                }
            }
            if let (Some(w), Some(s)) = (diagnostics.as_mut(), out.a2d.as_ref()) {
                w.record(global_step, s)?;
            }
            if literal_sgd {
                let lr = objective.plan.map(|p| p.a2d.lr).unwrap_or(cfg.lr);
                sgd_step(&mut params, &out.grad, lr)?;
            } else {
                opt.step(&mut params, &out.grad, cfg.lr)?;
            }
            task_sum += out.task;
            kd_sum += out.kd;
            total_sum += total;
            batches += 1.0;
        }
        let val_loss = evaluate_loss(spec, &params, &x_val, &y_val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            pending.flush_best(&progress)?;
            return Err(Error::NonFinite(format!(
                "validation loss at epoch {epoch}; last checkpoint kept in {}",
                opts.last_dir().display()
            )));
        }
        let record = EpochRecord {
            epoch,
            train_loss: total_sum / batches,
            val_loss,
            task_term: task_sum / batches,
            kd_term: kd_sum / batches,
            wall_s: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: train {:.6e} val {:.6e} (task {:.6e}, kd {:.6e})",
            record.train_loss, record.val_loss, record.task_term, record.kd_term
        );
        progress.history.push(record);
        progress.next_epoch += 1;
        if val_loss < progress.best_val_loss {
            progress.best_val_loss = val_loss;
            progress.best_epoch = epoch;
            pending.best = Some(params.clone());
        } else if epoch - progress.best_epoch >= cfg.early_stop_patience {
            info!("early stop at epoch {epoch}; best epoch {}", progress.best_epoch);
            progress.stopped = true;
        }
        pending.last_dirty = true;
        if cfg.checkpoint_every > 0 && progress.next_epoch % cfg.checkpoint_every == 0 {
            pending.flush(&params, &opt, &progress)?;
        }
        write_metrics(&metrics_path, &progress.history)?;
        if let Some(w) = diagnostics.as_mut() {
            w.flush()?;
        }
        ran += 1;
    }
    pending.flush(&params, &opt, &progress)?;
    if progress.history.is_empty() {
        warn!("run {} recorded no epochs", opts.run_dir.display());
    }
    Ok(RunRecord {
        initial_train_loss: progress.initial_train_loss,
        initial_val_loss: progress.initial_val_loss,
        initial_kd: progress.initial_kd,
        epochs: progress.history,
        best_epoch: progress.best_epoch,
        best_val_loss: progress.best_val_loss,
        stopped_early: progress.stopped,
        checkpoint: opts.best_dir(),
    })
}

/// Load the network stored in a checkpoint directory, dropping any
/// training-only groups.
pub fn load_network(dir: &Path) -> Result<Network> {
    let ck = load_checkpoint(dir)?;
    Network::from_parts(ck.spec, ck.params)
}
