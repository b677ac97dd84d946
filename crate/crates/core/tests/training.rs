use std::fs;
use std::path::Path;

use specdistill::dataset::{generate_wave_dataset, Dataset, DatasetLayout, Split, SplitCounts, WaveConfig};
use specdistill::distill::{DistillMode, DistillPlan, LossVariant, Tap};
use specdistill::nn::{load_checkpoint, ModelKind, ModelSpec, Network};
use specdistill::train::{
    distill_student, evaluate_loss, load_network, pretrain_teacher, train_baseline, OptimizerKind, RunOptions,
    TrainConfig,
};
use specdistill::Error;

fn wave_data(train: usize) -> Dataset {
    let cfg = WaveConfig {
        h: 16,
        w: 16,
        ..WaveConfig::default()
    };
    let mut layout = DatasetLayout::new(train + 2, 6, 3, 3);
    layout.counts = SplitCounts { train, val: 1, test: 1 };
    generate_wave_dataset(&cfg, layout).unwrap()
}

fn spec(kind: ModelKind) -> ModelSpec {
    let mut s = ModelSpec::default_for(kind, 3, 3, 1, 16, 16);
    s.hidden_dim = match kind {
        ModelKind::StAlternet | ModelKind::Simvp => 8,
        _ => 4,
    };
    s.depth = 2;
    s.heads = 2;
    s
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        early_stop_patience: epochs - 1,
        lr: 3e-3,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

fn single_plan(lambda: f64) -> DistillPlan {
    DistillPlan {
        lambda,
        teachers: vec!["teacher".into()],
        ..DistillPlan::default()
    }
}

#[test]
fn one_epoch_on_waves_reduces_train_loss() {
    let data = wave_data(4);
    let dir = tempfile::tempdir().unwrap();
    let s = spec(ModelKind::Resnet);
    let r = train_baseline(&s, &data, &cfg(2), &RunOptions::new(dir.path())).unwrap();
    let net = load_network(&r.checkpoint).unwrap();
    let (x, y) = data.stacked(Split::Train).unwrap();
    let after = evaluate_loss(&s, net.params(), &x, &y, 2).unwrap();
    assert!(after < r.initial_train_loss, "{after} vs {}", r.initial_train_loss);
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,val_loss,task_term,kd_term,wall_s\n"));
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn early_stopping_keeps_the_best_checkpoint() {
    let data = wave_data(4);
    let dir = tempfile::tempdir().unwrap();
    let s = spec(ModelKind::Resnet);
    let c = TrainConfig {
        epochs: 30,
        early_stop_patience: 2,
        lr: 0.5,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let r = pretrain_teacher(&s, &data, &c, &RunOptions::new(dir.path())).unwrap();
    assert!(r.stopped_early);
    assert!(r.epochs.len() < 30);
    let best = r.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_val_loss, best);
    assert_eq!(r.epochs[r.best_epoch].val_loss, best);
    let net = load_network(&r.checkpoint).unwrap();
    let (x, y) = data.stacked(Split::Val).unwrap();
    let val = evaluate_loss(&s, net.params(), &x, &y, c.batch_size).unwrap();
    assert!((val - best).abs() <= 1e-12 * best, "{val} vs {best}");
}

#[test]
fn diverging_sgd_aborts_and_keeps_the_last_checkpoint() {
    let data = wave_data(4);
    let dir = tempfile::tempdir().unwrap();
    let c = TrainConfig {
        optimizer: OptimizerKind::Sgd,
        lr: 1e6,
        checkpoint_every: 1,
        ..cfg(5)
    };
    let opts = RunOptions::new(dir.path());
    let err = pretrain_teacher(&spec(ModelKind::Resnet), &data, &c, &opts).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    if opts.last_dir().exists() {
        load_checkpoint(&opts.last_dir()).unwrap();
    }
}

#[test]
fn same_seed_runs_are_bitwise_identical() {
    let data = wave_data(4);
    let s = spec(ModelKind::Unet);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train_baseline(&s, &data, &cfg(3), &RunOptions::new(a.path())).unwrap();
    let rb = train_baseline(&s, &data, &cfg(3), &RunOptions::new(b.path())).unwrap();
    assert_eq!(ra.loss_trace(), rb.loss_trace());
    let (na, nb) = (load_network(&ra.checkpoint).unwrap(), load_network(&rb.checkpoint).unwrap());
    assert_eq!(na.params(), nb.params());

    let other = tempfile::tempdir().unwrap();
    let c = TrainConfig { seed: 7, ..cfg(3) };
    let rc = train_baseline(&s, &data, &c, &RunOptions::new(other.path())).unwrap();
    assert_ne!(ra.loss_trace(), rc.loss_trace());
}

fn trained_teacher(data: &Dataset, dir: &Path) -> Network {
    let r = pretrain_teacher(&spec(ModelKind::StAlternet), data, &cfg(2), &RunOptions::new(dir)).unwrap();
    load_network(&r.checkpoint).unwrap()
}

#[test]
fn zero_lambda_reproduces_the_baseline_trace() {
    let data = wave_data(4);
    let root = tempfile::tempdir().unwrap();
    let teacher = trained_teacher(&data, &root.path().join("t"));
    let s = spec(ModelKind::Unet);
    let base = train_baseline(&s, &data, &cfg(3), &RunOptions::new(root.path().join("b"))).unwrap();
    let kd = distill_student(&s, &[teacher], &data, &single_plan(0.0), &cfg(3), &RunOptions::new(root.path().join("d")))
        .unwrap();
    assert_eq!(base.loss_trace(), kd.loss_trace());
    assert!(kd.epochs.iter().all(|e| e.kd_term.is_finite()));
}

#[test]
fn self_distillation_starts_at_zero_kd() {
    let data = wave_data(4);
    let root = tempfile::tempdir().unwrap();
    let s = spec(ModelKind::Unet);
    let c = cfg(2);
    let teacher = Network::new(s.clone(), c.seed).unwrap();
    let r = distill_student(&s, &[teacher], &data, &single_plan(1.0), &c, &RunOptions::new(root.path())).unwrap();
    assert_eq!(r.initial_kd, Some(0.0));
    assert!(r.epochs[0].kd_term > 0.0);
}

#[test]
fn resumed_run_matches_an_uninterrupted_one() {
    let data = wave_data(4);
    let root = tempfile::tempdir().unwrap();
    let teacher = trained_teacher(&data, &root.path().join("t"));
    let s = spec(ModelKind::Unet);
    let plan = single_plan(0.5);
    let full = distill_student(&s, &[teacher.clone()], &data, &plan, &cfg(4), &RunOptions::new(root.path().join("full")))
        .unwrap();
    let split_dir = root.path().join("split");
    let first = RunOptions {
        stop_after: Some(2),
        ..RunOptions::new(&split_dir)
    };
    let part = distill_student(&s, &[teacher.clone()], &data, &plan, &cfg(4), &first).unwrap();
    assert_eq!(part.epochs.len(), 2);
    let again = RunOptions {
        resume: true,
        ..RunOptions::new(&split_dir)
    };
    let resumed = distill_student(&s, &[teacher], &data, &plan, &cfg(4), &again).unwrap();
    assert_eq!(full.loss_trace(), resumed.loss_trace());
    let (a, b) = (load_network(&full.checkpoint).unwrap(), load_network(&resumed.checkpoint).unwrap());
    assert_eq!(a.params(), b.params());
}

#[test]
fn missing_teacher_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_network(&dir.path().join("nowhere")).unwrap_err();
    assert!(matches!(err, Error::Missing(_)), "{err}");
}

#[test]
fn plan_and_teacher_count_must_agree() {
    let data = wave_data(4);
    let dir = tempfile::tempdir().unwrap();
    let s = spec(ModelKind::Unet);
    let t = Network::new(s.clone(), 1).unwrap();
    let plan = DistillPlan {
        mode: DistillMode::AverMkd,
        ..single_plan(1.0)
    };
    let err = distill_student(&s, &[t], &data, &plan, &cfg(2), &RunOptions::new(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn aekd_logs_feasible_weights() {
    let data = wave_data(4);
    let root = tempfile::tempdir().unwrap();
    let t1 = trained_teacher(&data, &root.path().join("t1"));
    let t2 = Network::new(spec(ModelKind::Simvp), 3).unwrap();
    let plan = DistillPlan {
        lambda: 1.0,
        mode: DistillMode::Aekd,
        teachers: vec!["a".into(), "b".into()],
        ..DistillPlan::default()
    };
    let run = root.path().join("s");
    let r = distill_student(&spec(ModelKind::Unet), &[t1, t2], &data, &plan, &cfg(2), &RunOptions::new(&run)).unwrap();
    assert!(r.epochs.iter().all(|e| e.train_loss.is_finite()));
    let log = fs::read_to_string(run.join("a2d.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "step,loss_0,loss_1,alpha_0,alpha_1,d_norm");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let (a0, a1) = (row[3], row[4]);
        assert!((a0 + a1 - 1.0).abs() < 1e-9);
        assert!(a0 <= 0.7 + 1e-9 && a1 <= 0.7 + 1e-9 && a0 >= -1e-12 && a1 >= -1e-12);
    }
}

#[test]
fn latent_tap_with_projection_and_ab_loss() {
    let data = wave_data(4);
    let root = tempfile::tempdir().unwrap();
    let teacher = trained_teacher(&data, &root.path().join("t"));
    let s = spec(ModelKind::Unet);
    let student = Network::new(s.clone(), 0).unwrap();
    let x = data.stacked(Split::Train).unwrap().0.gather_axis0(&[0]);
    let (_, zs) = student.predict_with_latent(&x).unwrap();
    let (_, zt) = teacher.predict_with_latent(&x).unwrap();
    assert_eq!(zs.shape()[2..], zt.shape()[2..]);
    assert_ne!(zs.shape()[1], zt.shape()[1], "the test needs a channel mismatch");
    for variant in [LossVariant::MseFeature, LossVariant::Ab] {
        let plan = DistillPlan {
            tap: Tap::Latent,
            loss_variant: variant,
            ..single_plan(0.5)
        };
        let opts = RunOptions::new(root.path().join(format!("{variant:?}")));
        let r = distill_student(&s, &[teacher.clone()], &data, &plan, &cfg(2), &opts).unwrap();
        assert!(r.initial_kd.unwrap() > 0.0);
        let ck = load_checkpoint(&opts.best_dir()).unwrap();
        assert!(ck.aux.contains_key("proj"));
        Network::from_parts(s.clone(), ck.params).unwrap();
    }
}

#[test]
fn latent_tap_spatial_mismatch_is_an_error() {
    let data = wave_data(4);
    let root = tempfile::tempdir().unwrap();
    let teacher = Network::new(spec(ModelKind::StAlternet), 0).unwrap();
    let plan = DistillPlan {
        tap: Tap::Latent,
        ..single_plan(0.5)
    };
    let err = distill_student(&spec(ModelKind::Resnet), &[teacher], &data, &plan, &cfg(2), &RunOptions::new(root.path()))
        .unwrap_err();
    assert!(matches!(err, Error::Shape(_)), "{err}");
}
