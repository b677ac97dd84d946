use std::io::Write;

use super::fft::{shell_count, shell_index, Fft2};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Energy per integer wavenumber shell of a single `[h, w]` field.
///
/// `E[k] = sum_{round(|w|) = k} |F(w)|^2 / (h w)^2`, so the shells sum to
/// the mean square of the field.
pub fn radial_energy_spectrum(field: &Tensor) -> Result<Vec<f64>> {
    if field.ndim() != 2 {
        return Err(Error::Shape(format!(
            "radial spectrum expects an [h, w] field, got {:?}",
            field.shape()
        )));
    }
    let (h, w) = field.grid()?;
    let fft = Fft2::new(h, w)?;
    let spec = fft.forward_real(field.data());
    let norm = 1.0 / ((h * w) as f64).powi(2);
    let mut e = vec![0.0; shell_count(h, w)];
    for r in 0..h {
        for c in 0..w {
            e[shell_index(r, c, h, w)] += spec[r * w + c].norm_sqr() * norm;
        }
    }
    Ok(e)
}

/// Mean radial spectrum over every trailing `[h, w]` slice of `fields`.
pub fn mean_radial_spectrum(fields: &Tensor) -> Result<Vec<f64>> {
    let (h, w) = fields.grid()?;
    let plane = h * w;
    let n = fields.numel() / plane;
    let mut acc = vec![0.0; shell_count(h, w)];
    for f in 0..n {
        let slice = Tensor::from_vec(&[h, w], fields.data()[f * plane..(f + 1) * plane].to_vec())?;
        for (a, v) in acc.iter_mut().zip(radial_energy_spectrum(&slice)?) {
            *a += v;
        }
    }
    if n > 0 {
        for a in acc.iter_mut() {
            *a /= n as f64;
        }
    }
    Ok(acc)
}

/// Least-squares slope of `ln E[k]` against `ln k` over shells `k0..=k1`.
pub fn fit_spectrum_slope(e: &[f64], shell_range: (usize, usize)) -> Result<f64> {
    let (k0, k1) = shell_range;
    if k0 == 0 || k1 <= k0 || k1 >= e.len() {
        return Err(Error::Config(format!(
            "invalid shell range {}..={} for spectrum of length {}",
            k0,
            k1,
            e.len()
        )));
    }
    let mut xs = Vec::with_capacity(k1 - k0 + 1);
    let mut ys = Vec::with_capacity(k1 - k0 + 1);
    for (k, &v) in e.iter().enumerate().take(k1 + 1).skip(k0) {
        if !(v > 0.0) {
            return Err(Error::Config(format!("zero energy in shell {k}")));
        }
        xs.push((k as f64).ln());
        ys.push(v.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Centered moving average with window `2 * half + 1`, truncated at edges.
pub fn smooth(e: &[f64], half: usize) -> Vec<f64> {
    (0..e.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(e.len() - 1);
            e[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Write `(shell, energy)` rows.
pub fn write_spectrum_csv<W: Write>(mut out: W, e: &[f64]) -> std::io::Result<()> {
    writeln!(out, "shell,energy")?;
    for (k, v) in e.iter().enumerate() {
        writeln!(out, "{k},{v:.12e}")?;
    }
    Ok(())
}
