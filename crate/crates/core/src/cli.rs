//! Command-line front end. Every subcommand reads a TOML pipeline config
//! and accepts `--seed` and `--out-dir` overrides.
//!
//! Output layout under `--out-dir`:
//!
//! ```text
//! data/                      dataset manifest and blobs
//! <run>/                     one directory per training run
//!   config.json metrics.csv checkpoints/{best,last}/
//! eval/metrics.csv
//! spectra/{band_errors,spectra}.csv, spectra.svg, band_errors.svg
//! bench/timing.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    generate_ns_dataset, generate_wave_dataset, load_dataset, save_dataset, Dataset, DatasetLayout, NsConfig, Split,
    SplitCounts, WaveConfig,
};
use crate::distill::DistillPlan;
use crate::eval::{
    bench_inference, evaluate_models, plot_band_errors_svg, plot_spectra_svg, write_band_errors_csv,
    write_metrics_csv, write_spectra_csv, write_timing_csv, EvalConfig,
};
use crate::nn::{ModelKind, ModelSpec, Network};
use crate::train::{distill_student, load_network, pretrain_teacher, train_baseline, RunOptions, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "specdistill", version, about = "Spectral knowledge distillation for 2D forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset into `<out-dir>/data`.
    GenData(Common),
    /// Pretrain the teacher.
    TrainTeacher(RunArgs),
    /// Train the student without a teacher (the baseline).
    TrainStudent(RunArgs),
    /// Train the student against one or more frozen teachers.
    Distill(DistillArgs),
    /// Write `eval/metrics.csv` for the selected models.
    Eval(ModelArgs),
    /// Write band errors, radial spectra and their plots.
    Spectra(ModelArgs),
    /// Time single forward passes; the first model is the reference.
    Bench(ModelArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the training and data-generation seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Run directory name under the output directory.
    #[arg(long)]
    pub name: Option<String>,
    /// Continue from the run's last checkpoint.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Teacher run or checkpoint directory; repeatable. Replaces the
    /// config's teacher list.
    #[arg(long = "teacher")]
    pub teachers: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: Common,
    /// `NAME=DIR` with DIR a run or checkpoint directory; repeatable.
    /// Defaults to whichever of teacher, student and distill exist.
    #[arg(long = "model", value_parser = parse_model)]
    pub models: Vec<(String, PathBuf)>,
    /// Use freshly initialized teacher and student instead of checkpoints.
    #[arg(long, conflicts_with = "models")]
    pub untrained: bool,
}

fn parse_model(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), dir.into())),
        _ => Err(format!("expected NAME=DIR, got '{s}'")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    NavierStokes,
    Wave,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub generator: GeneratorKind,
    pub n_sequences: usize,
    /// Explicit split sizes; overrides the 80/10/10 split of `n_sequences`.
    pub counts: Option<SplitCounts>,
    pub frames: usize,
    pub input_len: usize,
    pub horizon: usize,
    pub navier_stokes: NsConfig,
    pub wave: WaveConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorKind::NavierStokes,
            n_sequences: 120,
            counts: None,
            frames: 20,
            input_len: 10,
            horizon: 10,
            navier_stokes: NsConfig::default(),
            wave: WaveConfig::default(),
        }
    }
}

/// Model kind plus optional overrides of the kind's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_dim: Option<usize>,
    pub depth: Option<usize>,
    pub kernel: Option<usize>,
    pub heads: Option<usize>,
    pub n_down: Option<usize>,
    pub up_kernel: Option<usize>,
}

impl ModelConfig {
    pub fn of(kind: ModelKind) -> Self {
        Self {
            kind,
            hidden_dim: None,
            depth: None,
            kernel: None,
            heads: None,
            n_down: None,
            up_kernel: None,
        }
    }

    pub fn spec(&self, data: &Dataset) -> ModelSpec {
        let m = data.manifest();
        let [_, c, h, w] = m.shape;
        let mut s = ModelSpec::default_for(self.kind, m.input_len, m.horizon, c, h, w);
        s.hidden_dim = self.hidden_dim.unwrap_or(s.hidden_dim);
        s.depth = self.depth.unwrap_or(s.depth);
        s.kernel = self.kernel.unwrap_or(s.kernel);
        s.heads = self.heads.unwrap_or(s.heads);
        s.n_down = self.n_down.unwrap_or(s.n_down);
        s.up_kernel = self.up_kernel.unwrap_or(s.up_kernel);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub train: TrainConfig,
    /// Teacher-specific training settings; `train` when absent.
    pub teacher_train: Option<TrainConfig>,
    pub distill: DistillPlan,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            teacher: ModelConfig::of(ModelKind::StAlternet),
            student: ModelConfig::of(ModelKind::Unet),
            train: TrainConfig::default(),
            teacher_train: None,
            distill: DistillPlan::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        if !path.exists() {
            return Err(crate::Error::Missing(path.to_path_buf()).into());
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.message().to_string();
            crate::Error::Config(format!("{}: {msg}", path.display())).into()
        })
    }

    /// Applies `--seed` to every seeded stage.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            if let Some(t) = self.teacher_train.as_mut() {
                t.seed = s;
            }
            self.data.navier_stokes.seed = s;
        }
        self
    }

    pub fn teacher_train(&self) -> &TrainConfig {
        self.teacher_train.as_ref().unwrap_or(&self.train)
    }

    pub fn layout(&self) -> DatasetLayout {
        let d = &self.data;
        let mut layout = DatasetLayout::new(d.n_sequences, d.frames, d.input_len, d.horizon);
        if let Some(c) = d.counts {
            layout.counts = c;
        }
        layout
    }
}

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

/// Checkpoint directory for a run or checkpoint path.
pub fn resolve_checkpoint(path: &Path) -> crate::Result<PathBuf> {
    if path.join("manifest.json").exists() {
        return Ok(path.to_path_buf());
    }
    let best = path.join("checkpoints").join("best");
    if best.join("manifest.json").exists() {
        return Ok(best);
    }
    Err(crate::Error::Missing(best.join("manifest.json")))
}

fn load_data(out: &Path) -> anyhow::Result<Dataset> {
    Ok(load_dataset(data_dir(out))?)
}

pub fn generate(cfg: &PipelineConfig) -> crate::Result<Dataset> {
    match cfg.data.generator {
        GeneratorKind::NavierStokes => generate_ns_dataset(&cfg.data.navier_stokes, cfg.layout()),
        GeneratorKind::Wave => generate_wave_dataset(&cfg.data.wave, cfg.layout()),
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_from<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(c) => gen_data(&c),
        Command::TrainTeacher(a) => train(&a, true),
        Command::TrainStudent(a) => train(&a, false),
        Command::Distill(a) => distill(&a),
        Command::Eval(a) => eval(&a),
        Command::Spectra(a) => spectra(&a),
        Command::Bench(a) => bench(&a),
    }
}

fn config(c: &Common) -> anyhow::Result<PipelineConfig> {
    Ok(PipelineConfig::load(&c.config)?.with_seed(c.seed))
}

fn gen_data(c: &Common) -> anyhow::Result<()> {
    let cfg = config(c)?;
    let data = generate(&cfg)?;
    let dir = data_dir(&c.out_dir);
    save_dataset(&data, &dir)?;
    let sums: Vec<String> = data.checksums().iter().map(|s| format!("{s:08x}")).collect();
    println!("dataset {} checksums {}", dir.display(), sums.join(","));
    Ok(())
}

fn run_options(a: &RunArgs, default_name: &str) -> RunOptions {
    let name = a.name.as_deref().unwrap_or(default_name);
    RunOptions {
        resume: a.resume,
        ..RunOptions::new(a.common.out_dir.join(name))
    }
}

fn report_run(kind: &str, r: &crate::train::RunRecord) {
    println!(
        "{kind} best_epoch {} best_val_loss {:e} checkpoint {}",
        r.best_epoch,
        r.best_val_loss,
        r.checkpoint.display()
    );
}

fn train(a: &RunArgs, teacher: bool) -> anyhow::Result<()> {
    let cfg = config(&a.common)?;
    let data = load_data(&a.common.out_dir)?;
    let record = if teacher {
        let opts = run_options(a, "teacher");
        pretrain_teacher(&cfg.teacher.spec(&data), &data, cfg.teacher_train(), &opts)?
    } else {
        let opts = run_options(a, "student");
        train_baseline(&cfg.student.spec(&data), &data, &cfg.train, &opts)?
    };
    report_run(if teacher { "teacher" } else { "student" }, &record);
    Ok(())
}

fn distill(a: &DistillArgs) -> anyhow::Result<()> {
    let common = &a.run.common;
    let cfg = config(common)?;
    let mut plan = cfg.distill.clone();
    if !a.teachers.is_empty() {
        plan.teachers = a.teachers.clone();
    }
    if plan.teachers.is_empty() {
        plan.teachers = vec![common.out_dir.join("teacher")];
    }
    let mut teachers = Vec::with_capacity(plan.teachers.len());
    for t in &plan.teachers {
        let dir = resolve_checkpoint(t).with_context(|| format!("teacher {}", t.display()))?;
        info!("teacher {}", dir.display());
        teachers.push(load_network(&dir)?);
    }
    let data = load_data(&common.out_dir)?;
    let opts = run_options(&a.run, "distill");
    let record = distill_student(&cfg.student.spec(&data), &teachers, &data, &plan, &cfg.train, &opts)?;
    report_run("distill", &record);
    Ok(())
}

fn select_models(a: &ModelArgs, cfg: &PipelineConfig, data: &Dataset) -> anyhow::Result<Vec<(String, Network)>> {
    if a.untrained {
        let seed = cfg.train.seed;
        return Ok(vec![
            ("teacher".into(), Network::new(cfg.teacher.spec(data), seed)?),
            ("student".into(), Network::new(cfg.student.spec(data), seed)?),
        ]);
    }
    let chosen: Vec<(String, PathBuf)> = if a.models.is_empty() {
        ["teacher", "student", "distill"]
            .iter()
            .map(|n| (n.to_string(), a.common.out_dir.join(n)))
            .filter(|(_, d)| resolve_checkpoint(d).is_ok())
            .collect()
    } else {
        a.models.clone()
    };
    if chosen.is_empty() {
        bail!(crate::Error::Missing(a.common.out_dir.join("teacher/checkpoints/best/manifest.json")));
    }
    chosen
        .into_iter()
        .map(|(name, dir)| {
            let ck = resolve_checkpoint(&dir).with_context(|| format!("model {name}"))?;
            Ok((name, load_network(&ck)?))
        })
        .collect()
}

fn eval(a: &ModelArgs) -> anyhow::Result<()> {
    let cfg = config(&a.common)?;
    let data = load_data(&a.common.out_dir)?;
    let models = select_models(a, &cfg, &data)?;
    let evals = evaluate_models(&models, &data, Split::Test, &cfg.eval)?;
    let rows: Vec<_> = evals.iter().map(|e| (e.spectral.model.clone(), e.metrics.clone())).collect();
    let path = a.common.out_dir.join("eval").join("metrics.csv");
    write_metrics_csv(&path, &rows)?;
    for (name, m) in &rows {
        println!("{name} mse {:e} psnr {:.3} ssim {:.4}", m.mse, m.psnr, m.ssim);
    }
    Ok(())
}

fn spectra(a: &ModelArgs) -> anyhow::Result<()> {
    let cfg = config(&a.common)?;
    let data = load_data(&a.common.out_dir)?;
    let models = select_models(a, &cfg, &data)?;
    let evals = evaluate_models(&models, &data, Split::Test, &cfg.eval)?;
    let reports: Vec<_> = evals.into_iter().map(|e| e.spectral).collect();
    let dir = a.common.out_dir.join("spectra");
    write_band_errors_csv(&dir.join("band_errors.csv"), &reports)?;
    write_spectra_csv(&dir.join("spectra.csv"), &reports)?;
    plot_spectra_svg(&dir.join("spectra.svg"), &reports)?;
    plot_band_errors_svg(&dir.join("band_errors.svg"), &reports)?;
    for r in &reports {
        println!("{} low {:e} high {:e}", r.model, r.bands.low, r.bands.high);
    }
    Ok(())
}

fn bench(a: &ModelArgs) -> anyhow::Result<()> {
    let cfg = config(&a.common)?;
    let data = load_data(&a.common.out_dir)?;
    let models = select_models(a, &cfg, &data)?;
    let [_, c, h, w] = data.manifest().shape;
    let shape = [1, data.manifest().input_len * c, h, w];
    let refs: Vec<(String, &Network)> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
    let rows = bench_inference(&refs, &shape, &cfg.eval.bench)?;
    write_timing_csv(&a.common.out_dir.join("bench").join("timing.csv"), &rows)?;
    for r in &rows {
        println!("{} {:.6}s speedup {:.3}", r.model, r.mean_forward_s, r.speedup);
    }
    Ok(())
}

/// One-line report `error[<code>]: <message>` for a failed invocation,
/// with the exit status to use.
pub fn error_line(err: &anyhow::Error) -> (String, i32) {
    if let Some(e) = err.downcast_ref::<clap::Error>() {
        let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
        return (format!("error[usage]: {first}"), 2);
    }
    let code = err
        .chain()
        .find_map(|e| e.downcast_ref::<crate::Error>())
        .map_or("other", crate::Error::code);
    let msg: Vec<String> = err.chain().map(|e| e.to_string().replace('\n', " ")).collect();
    (format!("error[{code}]: {}", msg.join(": ")), 1)
}

/// The default pipeline config as TOML, a starting point for new configs.
pub fn default_config_toml() -> String {
    toml::to_string(&PipelineConfig::default()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::anyhow;

    #[test]
    fn default_config_round_trips_through_toml() {
        let text = default_config_toml();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<PipelineConfig>("[data]\nframez = 3\n").unwrap_err();
        assert!(err.to_string().contains("frames"), "{err}");
    }

    #[test]
    fn model_flag_parsing() {
        assert_eq!(parse_model("t=a/b").unwrap(), ("t".to_string(), PathBuf::from("a/b")));
        assert!(parse_model("nope").is_err());
        assert!(parse_model("=x").is_err());
    }

    #[test]
    fn error_lines_are_single_line() {
        let e = Cli::try_parse_from(["specdistill", "eval", "--bogus"]).unwrap_err();
        let (line, code) = error_line(&anyhow!(e));
        assert_eq!(code, 2);
        assert!(line.starts_with("error[usage]: "), "{line}");
        assert!(!line.contains('\n'));
        let e = anyhow::Error::from(crate::Error::Missing("x".into())).context("loading");
        assert_eq!(error_line(&e), ("error[missing]: loading: missing file x".to_string(), 1));
    }
}
