use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One travelling plane wave `a cos(kx x + ky y - c t + φ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveMode {
    pub kx: i32,
    pub ky: i32,
    pub amplitude: f64,
    pub phase_speed: f64,
    #[serde(default)]
    pub phase: f64,
}

impl WaveMode {
    pub fn new(kx: i32, ky: i32, amplitude: f64, phase_speed: f64) -> Self {
        Self {
            kx,
            ky,
            amplitude,
            phase_speed,
            phase: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    pub h: usize,
    pub w: usize,
    pub dt: f64,
    pub modes: Vec<WaveMode>,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            h: 32,
            w: 32,
            dt: 0.1,
            modes: vec![WaveMode::new(2, 1, 1.0, 0.5), WaveMode::new(0, 5, 0.3, 1.0)],
        }
    }
}

impl WaveConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.h.is_power_of_two() || !self.w.is_power_of_two() {
            return Err(Error::NonPowerOfTwo {
                h: self.h,
                w: self.w,
            });
        }
        for m in &self.modes {
            if m.kx.unsigned_abs() as usize >= self.w / 2 || m.ky.unsigned_abs() as usize >= self.h / 2 {
                return Err(Error::Config(format!(
                    "wave mode ({}, {}) is not below Nyquist on a {}x{} grid",
                    m.kx, m.ky, self.h, self.w
                )));
            }
        }
        Ok(())
    }

    /// Closed-form value at grid point `(r, c)` and time `t`.
    pub fn value(&self, r: usize, c: usize, t: f64) -> f64 {
        let x = 2.0 * std::f64::consts::PI * c as f64 / self.w as f64;
        let y = 2.0 * std::f64::consts::PI * r as f64 / self.h as f64;
        self.modes
            .iter()
            .map(|m| {
                m.amplitude * (m.kx as f64 * x + m.ky as f64 * y - m.phase_speed * t + m.phase).cos()
            })
            .sum()
    }

    /// Frames of sequence `index`; sequence `s` starts at time `s * frames * dt`.
    pub fn sequence(&self, index: usize, frames: usize) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut out = Vec::with_capacity(frames * h * w);
        for f in 0..frames {
            let t = (index * frames + f) as f64 * self.dt;
            for r in 0..h {
                for c in 0..w {
                    out.push(self.value(r, c, t));
                }
            }
        }
        out
    }
}
