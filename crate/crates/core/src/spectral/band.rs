use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{shell_index, Fft2};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Radial cutoff on a fixed grid. Fourier bins whose shell index
/// `round(|k|)` is at most `cutoff` belong to the low band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub cutoff: f64,
    pub h: usize,
    pub w: usize,
}

impl SpectralConfig {
    pub fn new(cutoff: f64, h: usize, w: usize) -> Result<Self> {
        let cfg = Self { cutoff, h, w };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `floor(min(h, w) / 8)` shells.
    pub fn with_default_cutoff(h: usize, w: usize) -> Result<Self> {
        Self::new((h.min(w) / 8) as f64, h, w)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.cutoff.is_finite() || self.cutoff < 0.0 {
            return Err(Error::Config(format!(
                "cutoff must be finite and >= 0, got {}",
                self.cutoff
            )));
        }
        if !self.h.is_power_of_two() || !self.w.is_power_of_two() {
            return Err(Error::NonPowerOfTwo {
                h: self.h,
                w: self.w,
            });
        }
        Ok(())
    }

    /// Radial Nyquist `floor(min(h, w) / 2) * sqrt(2)`.
    pub fn radial_nyquist(&self) -> f64 {
        (self.h.min(self.w) / 2) as f64 * std::f64::consts::SQRT_2
    }

    pub fn mask(&self) -> BandMask {
        BandMask::new(self)
    }
}

/// Partition of the Fourier grid into a low and a high band.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMask {
    h: usize,
    w: usize,
    low: Vec<bool>,
}

impl BandMask {
    pub fn new(cfg: &SpectralConfig) -> Self {
        let (h, w) = (cfg.h, cfg.w);
        let mut low = vec![false; h * w];
        for r in 0..h {
            for c in 0..w {
                low[r * w + c] = shell_index(r, c, h, w) as f64 <= cfg.cutoff;
            }
        }
        Self { h, w, low }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn is_low(&self, r: usize, c: usize) -> bool {
        self.low[r * self.w + c]
    }

    pub fn is_high(&self, r: usize, c: usize) -> bool {
        !self.is_low(r, c)
    }

    pub fn low(&self) -> &[bool] {
        &self.low
    }

    pub fn high(&self) -> Vec<bool> {
        self.low.iter().map(|l| !l).collect()
    }

    /// Split one spectrum in place: `spec` keeps the low band and the
    /// returned vector holds the high band.
    fn split_spectrum(&self, spec: &mut [Complex64]) -> Vec<Complex64> {
        let zero = Complex64::new(0.0, 0.0);
        let mut high = vec![zero; spec.len()];
        for (i, v) in spec.iter_mut().enumerate() {
            if !self.low[i] {
                high[i] = *v;
                *v = zero;
            }
        }
        high
    }
}

/// Low and high band components of a field, both in the spatial domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFeatures {
    pub low_component: Tensor,
    pub high_component: Tensor,
    /// Largest imaginary part discarded by the inverse transforms.
    pub max_imag_residue: f64,
}

fn fields_of(t: &Tensor, cfg: &SpectralConfig) -> Result<usize> {
    let (h, w) = t.grid()?;
    if (h, w) != (cfg.h, cfg.w) {
        return Err(Error::Shape(format!(
            "field grid {}x{} does not match spectral config {}x{}",
            h, w, cfg.h, cfg.w
        )));
    }
    Ok(t.numel() / (h * w))
}

/// Split every trailing `[h, w]` slice of `field` into its low and high
/// band, both mapped back to real space.
pub fn band_split(field: &Tensor, cfg: &SpectralConfig) -> Result<SpectralFeatures> {
    cfg.validate()?;
    let n_fields = fields_of(field, cfg)?;
    let fft = Fft2::new(cfg.h, cfg.w)?;
    let mask = cfg.mask();
    let plane = cfg.h * cfg.w;
    let mut low = Vec::with_capacity(field.numel());
    let mut high = Vec::with_capacity(field.numel());
    let mut residue = 0.0f64;
    for f in 0..n_fields {
        let mut spec = fft.forward_real(&field.data()[f * plane..(f + 1) * plane]);
        let high_spec = mask.split_spectrum(&mut spec);
        let (l, rl) = fft.inverse_real(spec);
        let (h, rh) = fft.inverse_real(high_spec);
        residue = residue.max(rl).max(rh);
        low.extend(l);
        high.extend(h);
    }
    Ok(SpectralFeatures {
        low_component: Tensor::from_vec(field.shape(), low)?,
        high_component: Tensor::from_vec(field.shape(), high)?,
        max_imag_residue: residue,
    })
}

/// Low-band projection only; the high band is `field - low`.
pub(crate) fn low_pass(field: &Tensor, cfg: &SpectralConfig) -> Result<Tensor> {
    let n_fields = fields_of(field, cfg)?;
    let fft = Fft2::new(cfg.h, cfg.w)?;
    let mask = cfg.mask();
    let plane = cfg.h * cfg.w;
    let mut low = Vec::with_capacity(field.numel());
    for f in 0..n_fields {
        let mut spec = fft.forward_real(&field.data()[f * plane..(f + 1) * plane]);
        mask.split_spectrum(&mut spec);
        low.extend(fft.inverse_real(spec).0);
    }
    Tensor::from_vec(field.shape(), low)
}

/// Band errors of a prediction, each averaged over the leading axes.
///
/// `low + high == total` where `total` is the per-field sum of squared
/// errors, i.e. the mean squared error times `h * w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandErrors {
    pub low: f64,
    pub high: f64,
    pub total: f64,
}

pub fn plancherel_decompose_error(
    pred: &Tensor,
    target: &Tensor,
    cfg: &SpectralConfig,
) -> Result<BandErrors> {
    pred.expect_same_shape(target)?;
    cfg.validate()?;
    let n_fields = fields_of(pred, cfg)?;
    let fft = Fft2::new(cfg.h, cfg.w)?;
    let mask = cfg.mask();
    let plane = cfg.h * cfg.w;
    let norm = 1.0 / plane as f64;
    let (mut low, mut high, mut total) = (0.0, 0.0, 0.0);
    for f in 0..n_fields {
        let range = f * plane..(f + 1) * plane;
        let diff: Vec<f64> = pred.data()[range.clone()]
            .iter()
            .zip(&target.data()[range])
            .map(|(p, t)| p - t)
            .collect();
        total += diff.iter().map(|d| d * d).sum::<f64>();
        let spec = fft.forward_real(&diff);
        for (i, c) in spec.iter().enumerate() {
            if mask.low[i] {
                low += c.norm_sqr() * norm;
            } else {
                high += c.norm_sqr() * norm;
            }
        }
    }
    let count = n_fields.max(1) as f64;
    Ok(BandErrors {
        low: low / count,
        high: high / count,
        total: total / count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Direct O(n^4) DFT, independent of the FFT path.
    fn direct_dft(field: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for kr in 0..h {
            for kc in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let phase =
                            -2.0 * PI * ((kr * r) as f64 / h as f64 + (kc * c) as f64 / w as f64);
                        acc += field[r * w + c] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[kr * w + kc] = acc;
            }
        }
        out
    }

    fn lcg_field(n: usize, mut seed: u64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn constant_field_is_all_low() {
        let cfg = SpectralConfig::new(0.0, 8, 8).unwrap();
        let f = Tensor::full(&[8, 8], 3.5);
        let s = band_split(&f, &cfg).unwrap();
        for (a, b) in s.low_component.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(s.high_component.max_abs() < 1e-12);
    }

    #[test]
    fn shell_two_mode_on_4x4_is_high_above_cutoff_one() {
        // mean 0.25 plus a cos mode at wavevector (2, 0), shell 2
        let (h, w) = (4, 4);
        let field: Vec<f64> = (0..16)
            .map(|i| {
                let c = i % w;
                0.25 + (2.0 * PI * 2.0 * c as f64 / w as f64).cos()
            })
            .collect();
        // oracle band split from the direct DFT
        let dft = direct_dft(&field, h, w);
        let mut low_energy = 0.0;
        for kr in 0..h {
            for kc in 0..w {
                if shell_index(kr, kc, h, w) <= 1 {
                    low_energy += dft[kr * w + kc].norm_sqr() / 16.0;
                }
            }
        }
        assert!((low_energy - 16.0 * 0.0625).abs() < 1e-12);

        let cfg = SpectralConfig::new(1.0, h, w).unwrap();
        let t = Tensor::from_vec(&[h, w], field.clone()).unwrap();
        let s = band_split(&t, &cfg).unwrap();
        for (i, v) in s.low_component.data().iter().enumerate() {
            assert!((v - 0.25).abs() < 1e-12, "low[{i}] = {v}");
        }
        for (i, v) in s.high_component.data().iter().enumerate() {
            assert!((v - (field[i] - 0.25)).abs() < 1e-12);
        }
    }

    #[test]
    fn random_field_partition_and_parseval() {
        let (h, w) = (32, 32);
        let field = lcg_field(h * w, 11);
        let t = Tensor::from_vec(&[h, w], field.clone()).unwrap();
        let cfg = SpectralConfig::new(8.0, h, w).unwrap();
        let s = band_split(&t, &cfg).unwrap();
        let total: f64 = field.iter().map(|v| v * v).sum();
        let e_low = s.low_component.sum_sq();
        let e_high = s.high_component.sum_sq();
        assert!(((e_low + e_high) - total).abs() / total < 1e-10);
        let recon = s.low_component.add(&s.high_component).unwrap();
        let err: f64 = recon
            .data()
            .iter()
            .zip(&field)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        assert!(err.sqrt() / total.sqrt() < 1e-10);
        assert!(s.max_imag_residue < 1e-12);
    }

    #[test]
    fn mask_is_partition_symmetric_with_dc_low() {
        for cutoff in [0.0, 1.0, 2.5, 8.0, 40.0] {
            let cfg = SpectralConfig::new(cutoff, 16, 8).unwrap();
            let m = cfg.mask();
            assert!(m.is_low(0, 0));
            for r in 0..16 {
                for c in 0..8 {
                    assert_ne!(m.is_low(r, c), m.is_high(r, c));
                    assert_eq!(m.is_low(r, c), m.is_low((16 - r) % 16, (8 - c) % 8));
                }
            }
        }
    }

    #[test]
    fn plancherel_identity_and_band_membership() {
        let (h, w) = (32, 32);
        let cfg = SpectralConfig::new(5.0, h, w).unwrap();
        let target = Tensor::from_vec(&[2, h, w], lcg_field(2 * h * w, 3)).unwrap();
        let zero = plancherel_decompose_error(&target, &target, &cfg).unwrap();
        assert_eq!((zero.low, zero.high, zero.total), (0.0, 0.0, 0.0));

        // residual = pure shell-10 mode
        let mode = Tensor::from_fn(&[2, h, w], |i| {
            let c = i % w;
            (2.0 * PI * 10.0 * c as f64 / w as f64).sin()
        });
        let pred = target.add(&mode).unwrap();
        let e = plancherel_decompose_error(&pred, &target, &cfg).unwrap();
        assert!(e.low / e.total < 1e-20);
        assert!((e.high - e.total).abs() / e.total < 1e-10);

        let other = Tensor::from_vec(&[2, h, w], lcg_field(2 * h * w, 5)).unwrap();
        for cutoff in [0.0, 2.0, 4.0, 8.0, 30.0] {
            let cfg = SpectralConfig::new(cutoff, h, w).unwrap();
            let e = plancherel_decompose_error(&other, &target, &cfg).unwrap();
            let mse = other.sub(&target).unwrap().sum_sq() / other.numel() as f64;
            assert!(((e.low + e.high) - e.total).abs() / e.total < 1e-10);
            assert!((e.total - mse * (h * w) as f64).abs() / e.total < 1e-12);
            assert!(e.low >= 0.0 && e.high >= 0.0);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = SpectralConfig::new(2.0, 8, 8).unwrap();
        let a = Tensor::zeros(&[8, 8]);
        let b = Tensor::zeros(&[4, 16]);
        assert!(plancherel_decompose_error(&a, &b, &cfg).is_err());
        assert!(band_split(&b, &cfg).is_err());
        assert!(SpectralConfig::new(2.0, 12, 8).is_err());
        assert!(SpectralConfig::new(-1.0, 8, 8).is_err());
    }
}
