//! Metrics, spectral diagnostics and inference benchmarks.

mod bench;
mod metrics;
mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bench::{bench_inference, write_timing_csv, BenchConfig, TimingReport};
pub use metrics::{fmt_value, mae, mse, psnr, ssim, MetricReport, SsimConfig};
pub use report::{
    plot_band_errors_svg, plot_spectra_svg, spectral_report, write_band_errors_csv, write_metrics_csv,
    write_spectra_csv, SpectralReport,
};

use crate::dataset::{Dataset, Split};
use crate::error::Result;
use crate::nn::Network;
use crate::spectral::SpectralConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub ssim: SsimConfig,
    /// Radial cutoff; `None` uses the default for the grid.
    pub cutoff: Option<f64>,
    pub bench: BenchConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            ssim: SsimConfig::default(),
            cutoff: None,
            bench: BenchConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn spectral(&self, h: usize, w: usize) -> Result<SpectralConfig> {
        match self.cutoff {
            Some(c) => SpectralConfig::new(c, h, w),
            None => SpectralConfig::with_default_cutoff(h, w),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelEval {
    pub metrics: MetricReport,
    pub spectral: SpectralReport,
}

/// Metrics and spectral diagnostics for each named model on one split.
/// PSNR and SSIM use the dataset's recorded data range.
pub fn evaluate_models(models: &[(String, Network)], data: &Dataset, split: Split, cfg: &EvalConfig) -> Result<Vec<ModelEval>> {
    let (x, y) = data.stacked(split)?;
    let (h, w) = y.grid()?;
    let spectral = cfg.spectral(h, w)?;
    let range = data.manifest().data_range;
    models
        .iter()
        .map(|(name, net)| {
            let pred = net.predict_batched(&x, cfg.batch_size)?;
            Ok(ModelEval {
                metrics: MetricReport::compute(&pred, &y, range, &cfg.ssim, &spectral)?,
                spectral: spectral_report(name, &pred, &y, &spectral)?,
            })
        })
        .collect()
}

/// `metrics.csv`, `band_errors.csv`, `spectra.csv` and the two SVG plots.
pub fn write_eval_outputs(dir: &Path, evals: &[ModelEval]) -> Result<()> {
    let rows: Vec<_> = evals.iter().map(|e| (e.spectral.model.clone(), e.metrics.clone())).collect();
    let reports: Vec<_> = evals.iter().map(|e| e.spectral.clone()).collect();
    write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    write_band_errors_csv(&dir.join("band_errors.csv"), &reports)?;
    write_spectra_csv(&dir.join("spectra.csv"), &reports)?;
    plot_spectra_svg(&dir.join("spectra.svg"), &reports)?;
    plot_band_errors_svg(&dir.join("band_errors.svg"), &reports)
}
