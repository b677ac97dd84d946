use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::fmt_value;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub groups: usize,
    pub repeats_per_group: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 5,
            groups: 5,
            repeats_per_group: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub model: String,
    /// Median over groups of the mean single-pass time, in seconds.
    pub mean_forward_s: f64,
    pub flops: u64,
    pub params: usize,
    /// Reference time over this model's time; the first model is the
    /// reference.
    pub speedup: f64,
}

/// Median of group means of one forward pass per model on a shared,
/// seeded input of `input_shape`.
pub fn bench_inference(models: &[(String, &Network)], input_shape: &[usize], cfg: &BenchConfig) -> Result<Vec<TimingReport>> {
    if models.is_empty() {
        return Err(Error::Config("nothing to benchmark".into()));
    }
    if cfg.groups == 0 || cfg.repeats_per_group == 0 {
        return Err(Error::Config("benchmark needs at least one group and repeat".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn(input_shape, |_| rng.random_range(-1.0..1.0));
    let mut out: Vec<TimingReport> = Vec::with_capacity(models.len());
    for (name, net) in models {
        for _ in 0..cfg.warmup {
            std::hint::black_box(net.predict(&x)?);
        }
        let mut means = Vec::with_capacity(cfg.groups);
        for _ in 0..cfg.groups {
            let t = Instant::now();
            for _ in 0..cfg.repeats_per_group {
                std::hint::black_box(net.predict(&x)?);
            }
            means.push(t.elapsed().as_secs_f64() / cfg.repeats_per_group as f64);
        }
        means.sort_by(f64::total_cmp);
        let mid = means.len() / 2;
        let median = if means.len() % 2 == 1 {
            means[mid]
        } else {
            0.5 * (means[mid - 1] + means[mid])
        };
        out.push(TimingReport {
            model: name.clone(),
            mean_forward_s: median,
            flops: net.count_flops(input_shape)?,
            params: net.count_params(),
            speedup: 1.0,
        });
    }
    let reference = out[0].mean_forward_s;
    for r in &mut out {
        r.speedup = reference / r.mean_forward_s;
    }
    Ok(out)
}

/// `model,mean_forward_s,flops,params,speedup`.
pub fn write_timing_csv(path: &Path, rows: &[TimingReport]) -> Result<()> {
    let mut text = String::from("model,mean_forward_s,flops,params,speedup\n");
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            r.model,
            fmt_value(r.mean_forward_s),
            r.flops,
            r.params,
            fmt_value(r.speedup)
        );
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ModelKind, ModelSpec};

    #[test]
    fn model_against_itself_has_unit_speedup() {
        let net = Network::new(ModelSpec::default_for(ModelKind::Resnet, 2, 1, 1, 8, 8), 0).unwrap();
        let cfg = BenchConfig {
            warmup: 1,
            groups: 5,
            repeats_per_group: 6,
        };
        let r = bench_inference(&[("a".into(), &net), ("b".into(), &net)], &[1, 2, 8, 8], &cfg).unwrap();
        assert_eq!(r[0].speedup, 1.0);
        assert!((r[1].speedup - 1.0).abs() < 0.5, "{}", r[1].speedup);
        assert_eq!(r[0].flops, r[1].flops);
        assert_eq!(r[0].params, net.count_params());
    }

    #[test]
    fn default_student_needs_under_half_the_teacher_flops() {
        let shape = [1, 10, 32, 32];
        let t = Network::new(ModelSpec::default_for(ModelKind::StAlternet, 10, 10, 1, 32, 32), 0).unwrap();
        let s = Network::new(ModelSpec::default_for(ModelKind::Unet, 10, 10, 1, 32, 32), 0).unwrap();
        let (tf, sf) = (t.count_flops(&shape).unwrap(), s.count_flops(&shape).unwrap());
        assert!(2 * sf <= tf, "{sf} vs {tf}");
    }
}
