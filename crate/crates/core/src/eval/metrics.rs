use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{plancherel_decompose_error, SpectralConfig};
use crate::tensor::Tensor;

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_same_shape(target)?;
    nonempty(pred)?;
    Ok(pred.sub(target)?.sum_sq() / pred.numel() as f64)
}

pub fn mae(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.expect_same_shape(target)?;
    nonempty(pred)?;
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.numel() as f64)
}

fn nonempty(t: &Tensor) -> Result<()> {
    if t.numel() == 0 {
        return Err(Error::Shape("metric over an empty tensor".into()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB. A perfect prediction returns
/// `f64::INFINITY`, which reports print as `inf`.
pub fn psnr(pred: &Tensor, target: &Tensor, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data_range must be positive, got {data_range}")));
    }
    let m = mse(pred, target)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Structural similarity with a uniform square window, averaged over all
/// fully contained window positions and over the leading axes. Window
/// statistics use population (divide by `n`) moments.
pub fn ssim(pred: &Tensor, target: &Tensor, cfg: &SsimConfig, data_range: f64) -> Result<f64> {
    pred.expect_same_shape(target)?;
    let (h, w) = pred.grid()?;
    let k = cfg.window;
    if k == 0 || k % 2 == 0 {
        return Err(Error::Config(format!("ssim window must be odd, got {k}")));
    }
    if k > h.min(w) {
        return Err(Error::Config(format!("ssim window {k} exceeds the {h}x{w} grid")));
    }
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data_range must be positive, got {data_range}")));
    }
    let c1 = (cfg.k1 * data_range).powi(2);
    let c2 = (cfg.k2 * data_range).powi(2);
    let plane = h * w;
    let fields = pred.numel() / plane;
    let n = (k * k) as f64;
    let (mut total, mut count) = (0.0, 0usize);
    for f in 0..fields {
        let a = &pred.data()[f * plane..(f + 1) * plane];
        let b = &target.data()[f * plane..(f + 1) * plane];
        let sa = SummedArea::build(h, w, |i| a[i]);
        let sb = SummedArea::build(h, w, |i| b[i]);
        let saa = SummedArea::pair(a, a, h, w);
        let sbb = SummedArea::pair(b, b, h, w);
        let sab = SummedArea::pair(a, b, h, w);
        for r in 0..=h - k {
            for c in 0..=w - k {
                let mx = sa.window(r, c, k) / n;
                let my = sb.window(r, c, k) / n;
                let vx = (saa.window(r, c, k) / n - mx * mx).max(0.0);
                let vy = (sbb.window(r, c, k) / n - my * my).max(0.0);
                let cxy = sab.window(r, c, k) / n - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Summed-area table for O(1) window sums.
struct SummedArea {
    table: Vec<f64>,
    w: usize,
}

impl SummedArea {
    fn pair(a: &[f64], b: &[f64], h: usize, w: usize) -> Self {
        Self::build(h, w, |i| a[i] * b[i])
    }

    fn build(h: usize, w: usize, v: impl Fn(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut table = vec![0.0; (h + 1) * stride];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                row += v(r * w + c);
                table[(r + 1) * stride + c + 1] = table[r * stride + c + 1] + row;
            }
        }
        Self { table, w }
    }

    fn window(&self, r: usize, c: usize, k: usize) -> f64 {
        let s = self.w + 1;
        let t = &self.table;
        t[(r + k) * s + c + k] - t[r * s + c + k] - t[(r + k) * s + c] + t[r * s + c]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Per-field low-band squared error; `low + high = mse * h * w`.
    pub low_band_err: f64,
    pub high_band_err: f64,
    pub n_samples: usize,
}

impl MetricReport {
    pub fn compute(
        pred: &Tensor,
        target: &Tensor,
        data_range: f64,
        ssim_cfg: &SsimConfig,
        spectral: &SpectralConfig,
    ) -> Result<Self> {
        let bands = plancherel_decompose_error(pred, target, spectral)?;
        Ok(Self {
            mse: mse(pred, target)?,
            mae: mae(pred, target)?,
            psnr: psnr(pred, target, data_range)?,
            ssim: ssim(pred, target, ssim_cfg, data_range)?,
            low_band_err: bands.low,
            high_band_err: bands.high,
            n_samples: pred.shape().first().copied().unwrap_or(0),
        })
    }
}

/// Fixed-precision formatting for CSV output; infinities print as `inf`.
pub fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.9e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pointwise_metric_examples() {
        let y = rand_tensor(&[2, 3, 8, 8], 0);
        assert_eq!((mse(&y, &y).unwrap(), mae(&y, &y).unwrap()), (0.0, 0.0));
        let off = y.map(|v| v - 0.25);
        assert!((mse(&off, &y).unwrap() - 0.0625).abs() < 1e-15);
        assert!((mae(&off, &y).unwrap() - 0.25).abs() < 1e-15);
        let p = rand_tensor(&[2, 3, 8, 8], 1);
        let (mut s2, mut s1) = (0.0, 0.0);
        for i in 0..p.numel() {
            let d = p.data()[i] - y.data()[i];
            s2 += d * d;
            s1 += d.abs();
        }
        assert!((mse(&p, &y).unwrap() - s2 / 384.0).abs() < 1e-12);
        assert!((mae(&p, &y).unwrap() - s1 / 384.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_examples() {
        let y = Tensor::zeros(&[4, 4]);
        let p = Tensor::full(&[4, 4], 0.1);
        assert!((psnr(&p, &y, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&y, &y, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(fmt_value(f64::INFINITY), "inf");
        let a = rand_tensor(&[3, 5], 2);
        let b = rand_tensor(&[3, 5], 3);
        let want = 10.0 * (4.0 / mse(&a, &b).unwrap()).log10();
        assert!((psnr(&a, &b, 2.0).unwrap() - want).abs() < 1e-12);
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    /// Direct per-window evaluation with explicit loops.
    fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize, k: usize, l: f64) -> f64 {
        let (c1, c2) = ((0.01 * l) * (0.01 * l), (0.03 * l) * (0.03 * l));
        let mut acc = 0.0;
        let mut count = 0.0;
        for r in 0..=h - k {
            for c in 0..=w - k {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for i in 0..k {
                    for j in 0..k {
                        xs.push(a[(r + i) * w + c + j]);
                        ys.push(b[(r + i) * w + c + j]);
                    }
                }
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
                let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        acc / count
    }

    #[test]
    fn ssim_matches_direct_windows() {
        let a = rand_tensor(&[8, 8], 4);
        let b = a.zip_map(&rand_tensor(&[8, 8], 5), |x, n| x + 0.3 * n).unwrap();
        for k in [3, 5, 7] {
            let cfg = SsimConfig { window: k, ..SsimConfig::default() };
            let got = ssim(&a, &b, &cfg, 2.0).unwrap();
            let want = ssim_oracle(a.data(), b.data(), 8, 8, k, 2.0);
            assert!((got - want).abs() < 1e-9, "{k}: {got} vs {want}");
        }
    }

    #[test]
    fn ssim_properties() {
        let cfg = SsimConfig::default();
        let a = rand_tensor(&[2, 16, 16], 6);
        assert!((ssim(&a, &a, &cfg, 2.0).unwrap() - 1.0).abs() < 1e-9);
        let shifted = a.map(|v| v + 5.0);
        assert!(ssim(&shifted, &a, &cfg, 2.0).unwrap() < 1.0);
        let b = rand_tensor(&[2, 16, 16], 7);
        let ab = ssim(&a, &b, &cfg, 2.0).unwrap();
        assert!((ab - ssim(&b, &a, &cfg, 2.0).unwrap()).abs() < 1e-15);
        assert!((-1.0..=1.0).contains(&ab));
        assert!(ssim(&Tensor::zeros(&[4, 4]), &Tensor::zeros(&[4, 4]), &cfg, 1.0).is_err());
    }

    #[test]
    fn band_errors_sum_to_scaled_mse() {
        let cfg = SpectralConfig::new(4.0, 16, 16).unwrap();
        let p = rand_tensor(&[3, 2, 16, 16], 8);
        let y = rand_tensor(&[3, 2, 16, 16], 9);
        let r = MetricReport::compute(&p, &y, 2.0, &SsimConfig::default(), &cfg).unwrap();
        assert!(((r.low_band_err + r.high_band_err) - r.mse * 256.0).abs() < 1e-9 * r.mse * 256.0);
        assert_eq!(r.n_samples, 3);
    }
}
