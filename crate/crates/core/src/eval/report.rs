//! Band-error tables, radial spectra and their CSV and SVG renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::{fmt_value, MetricReport};
use crate::error::{Error, Result};
use crate::spectral::{mean_radial_spectrum, plancherel_decompose_error, BandErrors, SpectralConfig};
use crate::tensor::Tensor;

/// Spectral diagnostics of one model's predictions on a split.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralReport {
    pub model: String,
    pub bands: BandErrors,
    /// Mean radial energy spectrum of the predictions, per shell.
    pub pred_spectrum: Vec<f64>,
    pub target_spectrum: Vec<f64>,
}

pub fn spectral_report(model: &str, pred: &Tensor, target: &Tensor, cfg: &SpectralConfig) -> Result<SpectralReport> {
    Ok(SpectralReport {
        model: model.to_string(),
        bands: plancherel_decompose_error(pred, target, cfg)?,
        pred_spectrum: mean_radial_spectrum(pred)?,
        target_spectrum: mean_radial_spectrum(target)?,
    })
}

fn write(path: &Path, text: String) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `model,mse,mae,psnr,ssim,low_band_err,high_band_err,n_samples`.
pub fn write_metrics_csv(path: &Path, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut text = String::from("model,mse,mae,psnr,ssim,low_band_err,high_band_err,n_samples\n");
    for (name, r) in rows {
        let _ = writeln!(
            text,
            "{name},{},{},{},{},{},{},{}",
            fmt_value(r.mse),
            fmt_value(r.mae),
            fmt_value(r.psnr),
            fmt_value(r.ssim),
            fmt_value(r.low_band_err),
            fmt_value(r.high_band_err),
            r.n_samples
        );
    }
    write(path, text)
}

/// `model,band,error` rows for the low, high and total bands.
pub fn write_band_errors_csv(path: &Path, reports: &[SpectralReport]) -> Result<()> {
    let mut text = String::from("model,band,error\n");
    for r in reports {
        for (band, v) in [("low", r.bands.low), ("high", r.bands.high), ("total", r.bands.total)] {
            let _ = writeln!(text, "{},{band},{}", r.model, fmt_value(v));
        }
    }
    write(path, text)
}

/// `model,shell,pred_energy,target_energy`.
pub fn write_spectra_csv(path: &Path, reports: &[SpectralReport]) -> Result<()> {
    let mut text = String::from("model,shell,pred_energy,target_energy\n");
    for r in reports {
        for (k, (p, t)) in r.pred_spectrum.iter().zip(&r.target_spectrum).enumerate() {
            let _ = writeln!(text, "{},{k},{},{}", r.model, fmt_value(*p), fmt_value(*t));
        }
    }
    write(path, text)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD / 2.0
    );
    s
}

/// Log-scale radial spectra: the target once, then one line per model.
pub fn plot_spectra_svg(path: &Path, reports: &[SpectralReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(Error::Config("no spectra to plot".into()));
    };
    let mut series: Vec<(String, &[f64])> = vec![("target".into(), &first.target_spectrum)];
    series.extend(reports.iter().map(|r| (r.model.clone(), r.pred_spectrum.as_slice())));
    let positive = series.iter().flat_map(|(_, e)| e.iter().skip(1)).filter(|v| **v > 0.0);
    let (lo, hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !lo.is_finite() {
        return Err(Error::Config("spectra have no positive energy".into()));
    }
    let (llo, lhi) = (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0));
    let shells = first.target_spectrum.len().max(2);
    let x = |k: usize| PAD + (k as f64 - 1.0) / (shells as f64 - 2.0).max(1.0) * (W - 1.5 * PAD);
    let y = |v: f64| H - PAD - (v.log10() - llo) / (lhi - llo) * (H - 2.0 * PAD);
    let mut s = svg_open("Radial energy spectrum");
    for d in llo as i32..=lhi as i32 {
        let yy = y(10f64.powi(d));
        let _ = writeln!(s, r#"<text x="{}" y="{yy}" text-anchor="end">1e{d}</text>"#, PAD - 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">shell k</text>"#, W / 2.0, H - 16.0);
    for (i, (name, e)) in series.iter().enumerate() {
        let color = if i == 0 { "black" } else { PALETTE[(i - 1) % PALETTE.len()] };
        let pts: Vec<String> = e
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, v)| **v > 0.0)
            .map(|(k, v)| format!("{:.2},{:.2}", x(k), y(*v)))
            .collect();
        let dash = if i == 0 { r#" stroke-dasharray="6 3""# } else { "" };
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"{dash}/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            W - 150.0,
            PAD + 16.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    write(path, s)
}

/// Grouped bars of low and high band error per model.
pub fn plot_band_errors_svg(path: &Path, reports: &[SpectralReport]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Config("no band errors to plot".into()));
    }
    let top = reports
        .iter()
        .map(|r| r.bands.low.max(r.bands.high))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut s = svg_open("Band-resolved prediction error");
    let slot = (W - 1.5 * PAD) / reports.len() as f64;
    let bar = slot * 0.35;
    for (i, r) in reports.iter().enumerate() {
        let x0 = PAD + slot * i as f64 + slot * 0.15;
        for (j, (v, color)) in [(r.bands.low, PALETTE[0]), (r.bands.high, PALETTE[1])].into_iter().enumerate() {
            let h = v / top * (H - 2.0 * PAD);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{bar:.2}" height="{h:.2}" fill="{color}"/>"#,
                x0 + bar * j as f64,
                H - PAD - h
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + bar,
            H - PAD + 16.0,
            r.model
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{}">low band</text>"#, W - 150.0, PAD, PALETTE[0]);
    let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{}">high band</text>"#, W - 150.0, PAD + 16.0, PALETTE[1]);
    let _ = writeln!(s, r#"<text x="{}" y="{PAD}" text-anchor="end">{top:.3e}</text>"#, PAD - 4.0);
    s.push_str("</svg>\n");
    write(path, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::band_split;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn perfect_predictor_has_no_band_error() {
        let cfg = SpectralConfig::new(4.0, 16, 16).unwrap();
        let y = rand_tensor(&[2, 3, 16, 16], 0);
        let r = spectral_report("m", &y, &y, &cfg).unwrap();
        assert_eq!((r.bands.low, r.bands.high, r.bands.total), (0.0, 0.0, 0.0));
        assert_eq!(r.pred_spectrum, r.target_spectrum);
    }

    #[test]
    fn low_band_predictor_misses_exactly_the_high_band() {
        let cfg = SpectralConfig::new(3.0, 16, 16).unwrap();
        let y = rand_tensor(&[4, 16, 16], 1);
        let parts = band_split(&y, &cfg).unwrap();
        let r = spectral_report("low", &parts.low_component, &y, &cfg).unwrap();
        let high_energy = parts.high_component.sum_sq() / 4.0;
        assert!((r.bands.high - high_energy).abs() < 1e-10 * high_energy);
        assert!(r.bands.low < 1e-20);
    }

    #[test]
    fn csv_and_svg_outputs() {
        let cfg = SpectralConfig::new(2.0, 8, 8).unwrap();
        let y = rand_tensor(&[2, 8, 8], 2);
        let p = rand_tensor(&[2, 8, 8], 3);
        let reports = vec![
            spectral_report("a", &p, &y, &cfg).unwrap(),
            spectral_report("b", &y, &y, &cfg).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        write_spectra_csv(&dir.path().join("spectra.csv"), &reports).unwrap();
        write_band_errors_csv(&dir.path().join("bands.csv"), &reports).unwrap();
        plot_spectra_svg(&dir.path().join("s.svg"), &reports).unwrap();
        plot_band_errors_svg(&dir.path().join("b.svg"), &reports).unwrap();
        let spectra = fs::read_to_string(dir.path().join("spectra.csv")).unwrap();
        assert_eq!(spectra.lines().count(), 1 + 2 * reports[0].pred_spectrum.len());
        let bands = fs::read_to_string(dir.path().join("bands.csv")).unwrap();
        assert!(bands.contains("b,high,0.000000000e0"));
        assert!(fs::read_to_string(dir.path().join("s.svg")).unwrap().starts_with("<svg"));
    }
}
