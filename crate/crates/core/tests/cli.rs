use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_specdistill");

/// A tiny wave pipeline that trains in well under a second per stage.
const CONFIG: &str = r#"
[data]
generator = "wave"
frames = 6
input_len = 3
horizon = 3
counts = { train = 4, val = 1, test = 2 }

[data.wave]
h = 16
w = 16

[teacher]
kind = "st_alternet"
hidden_dim = 8
depth = 1
heads = 2

[student]
kind = "unet"
hidden_dim = 4
depth = 2

[train]
epochs = 2
early_stop_patience = 1
lr = 3e-3
batch_size = 2

[eval.bench]
warmup = 1
groups = 1
repeats_per_group = 1
"#;

fn setup(dir: &Path) -> String {
    let path = dir.join("pipeline.toml");
    fs::write(&path, CONFIG).unwrap();
    path.to_str().unwrap().to_string()
}

fn run(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(args: &[&str]) -> String {
    let (success, stdout, stderr) = run(args);
    assert!(success, "{args:?} failed: {stderr}");
    stdout
}

fn fails_with(args: &[&str], code: &str) {
    let out = Command::new(BIN).args(args).output().unwrap();
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.trim_end();
    assert_eq!(line.lines().count(), 1, "{line}");
    assert!(line.starts_with(&format!("error[{code}]: ")), "{line}");
}

#[test]
fn full_pipeline_emits_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let common = ["--config", cfg.as_str(), "--out-dir", out];
    for cmd in ["gen-data", "train-teacher", "train-student", "distill", "eval", "spectra", "bench"] {
        let mut args = vec![cmd];
        args.extend(common);
        ok(&args);
    }
    let out = Path::new(out);
    for file in [
        "data/manifest.json",
        "teacher/metrics.csv",
        "teacher/config.json",
        "student/checkpoints/best/manifest.json",
        "distill/metrics.csv",
        "eval/metrics.csv",
        "spectra/spectra.csv",
        "spectra/band_errors.csv",
        "spectra/spectra.svg",
        "spectra/band_errors.svg",
        "bench/timing.csv",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let metrics = fs::read_to_string(out.join("eval/metrics.csv")).unwrap();
    let models: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(models, ["teacher", "student", "distill"]);
    let timing = fs::read_to_string(out.join("bench/timing.csv")).unwrap();
    assert!(timing.lines().nth(1).unwrap().ends_with(",1.000000000e0"));
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let a = ok(&["gen-data", "--config", &cfg, "--out-dir", dir.path().join("a").to_str().unwrap()]);
    let b = ok(&["gen-data", "--config", &cfg, "--out-dir", dir.path().join("b").to_str().unwrap()]);
    let sums = |s: &str| s.split_whitespace().last().unwrap().to_string();
    assert_eq!(sums(&a), sums(&b));
    let ma = fs::read(dir.path().join("a/data/train.f32")).unwrap();
    let mb = fs::read(dir.path().join("b/data/train.f32")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn untrained_models_evaluate_to_finite_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    ok(&["gen-data", "--config", &cfg, "--out-dir", out]);
    ok(&["eval", "--config", &cfg, "--out-dir", out, "--untrained"]);
    let metrics = fs::read_to_string(Path::new(out).join("eval/metrics.csv")).unwrap();
    for row in metrics.lines().skip(1) {
        for v in row.split(',').skip(1) {
            let v: f64 = v.parse().unwrap();
            assert!(v.is_finite(), "{row}");
        }
    }
}

#[test]
fn errors_are_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    fails_with(&["eval", "--config", &cfg, "--bogus"], "usage");
    fails_with(&["frobnicate"], "usage");
    fails_with(&["gen-data"], "usage");
    fails_with(&["gen-data", "--config", "/definitely/not/here.toml"], "missing");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nepochz = 3\n").unwrap();
    fails_with(&["gen-data", "--config", bad.to_str().unwrap(), "--out-dir", out], "config");

    ok(&["gen-data", "--config", &cfg, "--out-dir", out]);
    // distilling before any teacher exists
    fails_with(&["distill", "--config", &cfg, "--out-dir", out], "missing");
    fails_with(&["eval", "--config", &cfg, "--out-dir", out], "missing");
}

#[test]
fn seed_flag_changes_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    ok(&["gen-data", "--config", &cfg, "--out-dir", out]);
    let a = ok(&["train-student", "--config", &cfg, "--out-dir", out, "--name", "a"]);
    let b = ok(&["train-student", "--config", &cfg, "--out-dir", out, "--name", "b", "--seed", "7"]);
    let loss = |s: &str| s.split_whitespace().nth(4).unwrap().to_string();
    assert_ne!(loss(&a), loss(&b));
    let c = ok(&["train-student", "--config", &cfg, "--out-dir", out, "--name", "c"]);
    assert_eq!(loss(&a), loss(&c));
}
