use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Planned 2D complex FFT over a row-major `[h, w]` grid.
///
/// The forward transform is unnormalized; the inverse divides by `h * w`.
#[derive(Clone)]
pub struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("h", &self.h)
            .field("w", &self.w)
            .finish()
    }
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if !h.is_power_of_two() || !w.is_power_of_two() {
            return Err(Error::NonPowerOfTwo { h, w });
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn transform(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(buf.len(), self.h * self.w);
        for r in buf.chunks_exact_mut(self.w) {
            row.process(r);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); self.h];
        for c in 0..self.w {
            for (r, slot) in column.iter_mut().enumerate() {
                *slot = buf[r * self.w + c];
            }
            col.process(&mut column);
            for (r, v) in column.iter().enumerate() {
                buf[r * self.w + c] = *v;
            }
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_inv, &self.col_inv);
        let norm = 1.0 / (self.h * self.w) as f64;
        for v in buf.iter_mut() {
            *v *= norm;
        }
    }

    pub fn forward_real(&self, field: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform returning the real part and the largest discarded
    /// imaginary magnitude.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> (Vec<f64>, f64) {
        self.inverse(&mut spectrum);
        let mut residue = 0.0f64;
        let out = spectrum
            .into_iter()
            .map(|c| {
                residue = residue.max(c.im.abs());
                c.re
            })
            .collect();
        (out, residue)
    }
}

/// Signed integer wavenumber for FFT bin `i` of an `n`-point transform.
#[inline]
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Radial shell index `round(|k|)` of bin `(r, c)` on an `h x w` grid.
#[inline]
pub fn shell_index(r: usize, c: usize, h: usize, w: usize) -> usize {
    let ky = wavenumber(r, h) as f64;
    let kx = wavenumber(c, w) as f64;
    (kx * kx + ky * ky).sqrt().round() as usize
}

/// Number of radial shells on an `h x w` grid.
pub fn shell_count(h: usize, w: usize) -> usize {
    let ky = (h / 2) as f64;
    let kx = (w / 2) as f64;
    (kx * kx + ky * ky).sqrt().round() as usize + 1
}
