//! Pseudo-spectral solver for the 2D incompressible Navier–Stokes equations
//! in vorticity form on the periodic box `[0, 2π)^2`:
//!
//! `∂ω/∂t + u·∇ω = ν∇²ω + f`, with `u = (∂ψ/∂y, -∂ψ/∂x)` and `∇²ψ = -ω`.
//!
//! Advection is integrated with Heun's RK2 under an exact integrating factor
//! for diffusion; the nonlinear term is dealiased with the 2/3 rule.

use log::warn;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::{wavenumber, Fft2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NsConfig {
    pub h: usize,
    pub w: usize,
    pub viscosity: f64,
    /// Amplitude of the steady forcing `A (sin(x + y) + cos(x + y))`.
    pub forcing_amplitude: f64,
    pub dt: f64,
    pub steps_per_frame: usize,
    /// Steps integrated before the first recorded frame.
    pub spinup_steps: usize,
    pub seed: u64,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            h: 32,
            w: 32,
            viscosity: 1e-3,
            forcing_amplitude: 0.1,
            dt: 0.02,
            steps_per_frame: 10,
            spinup_steps: 50,
            seed: 42,
        }
    }
}

impl NsConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.h.is_power_of_two() || !self.w.is_power_of_two() {
            return Err(Error::NonPowerOfTwo {
                h: self.h,
                w: self.w,
            });
        }
        if !(self.viscosity > 0.0) {
            return Err(Error::Config("viscosity must be > 0".into()));
        }
        if !(self.forcing_amplitude >= 0.0) {
            return Err(Error::Config("forcing amplitude must be >= 0".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        if self.steps_per_frame == 0 {
            return Err(Error::Config("steps_per_frame must be >= 1".into()));
        }
        Ok(())
    }
}

/// Reusable solver state: FFT plans, wavenumber tables and the forcing.
#[derive(Debug, Clone)]
pub struct NsSolver {
    cfg: NsConfig,
    fft: Fft2,
    /// `i k_x` and `i k_y` derivative symbols (zero on the Nyquist bins).
    dx: Vec<Complex64>,
    dy: Vec<Complex64>,
    /// `1 / |k|^2`, zero at the mean.
    inv_k2: Vec<f64>,
    /// `exp(-ν |k|^2 dt)`.
    decay: Vec<f64>,
    dealias: Vec<bool>,
    forcing_hat: Vec<Complex64>,
    steps: usize,
}

impl NsSolver {
    pub fn new(cfg: &NsConfig) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = (cfg.h, cfg.w);
        let fft = Fft2::new(h, w)?;
        let n = h * w;
        let mut dx = vec![Complex64::new(0.0, 0.0); n];
        let mut dy = vec![Complex64::new(0.0, 0.0); n];
        let mut inv_k2 = vec![0.0; n];
        let mut decay = vec![1.0; n];
        let mut dealias = vec![false; n];
        let (kx_max, ky_max) = (w as f64 / 3.0, h as f64 / 3.0);
        for r in 0..h {
            let ky = wavenumber(r, h) as f64;
            for c in 0..w {
                let kx = wavenumber(c, w) as f64;
                let i = r * w + c;
                if c != w / 2 {
                    dx[i] = Complex64::new(0.0, kx);
                }
                if r != h / 2 {
                    dy[i] = Complex64::new(0.0, ky);
                }
                let k2 = kx * kx + ky * ky;
                if k2 > 0.0 {
                    inv_k2[i] = 1.0 / k2;
                }
                decay[i] = (-cfg.viscosity * k2 * cfg.dt).exp();
                dealias[i] = kx.abs() < kx_max && ky.abs() < ky_max;
            }
        }
        let forcing: Vec<f64> = (0..n)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                let x = 2.0 * std::f64::consts::PI * c as f64 / w as f64;
                let y = 2.0 * std::f64::consts::PI * r as f64 / h as f64;
                cfg.forcing_amplitude * ((x + y).sin() + (x + y).cos())
            })
            .collect();
        let forcing_hat = fft.forward_real(&forcing);
        Ok(Self {
            cfg: cfg.clone(),
            fft,
            dx,
            dy,
            inv_k2,
            decay,
            dealias,
            forcing_hat,
            steps: 0,
        })
    }

    pub fn config(&self) -> &NsConfig {
        &self.cfg
    }

    fn physical(&self, spec: &[Complex64], symbol: &[Complex64], scale: &[f64]) -> Vec<f64> {
        let buf: Vec<Complex64> = spec
            .iter()
            .zip(symbol)
            .zip(scale)
            .map(|((s, m), k)| s * m * *k)
            .collect();
        self.fft.inverse_real(buf).0
    }

    /// Velocity components `(u, v)` in physical space.
    pub fn velocity(&self, omega_hat: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        // u = dψ/dy, v = -dψ/dx with ψ = ω / |k|^2
        let u = self.physical(omega_hat, &self.dy, &self.inv_k2);
        let v: Vec<f64> = self
            .physical(omega_hat, &self.dx, &self.inv_k2)
            .into_iter()
            .map(|x| -x)
            .collect();
        (u, v)
    }

    /// Dealiased `-u·∇ω + f` in spectral space, plus the peak speed.
    fn rhs(&self, omega_hat: &[Complex64]) -> (Vec<Complex64>, f64) {
        let ones = vec![1.0; omega_hat.len()];
        let (u, v) = self.velocity(omega_hat);
        let wx = self.physical(omega_hat, &self.dx, &ones);
        let wy = self.physical(omega_hat, &self.dy, &ones);
        let mut peak = 0.0f64;
        let adv: Vec<f64> = (0..u.len())
            .map(|i| {
                peak = peak.max((u[i] * u[i] + v[i] * v[i]).sqrt());
                -(u[i] * wx[i] + v[i] * wy[i])
            })
            .collect();
        let mut out = self.fft.forward_real(&adv);
        for (i, o) in out.iter_mut().enumerate() {
            *o = if self.dealias[i] {
                *o + self.forcing_hat[i]
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        (out, peak)
    }

    fn courant(&self, peak_speed: f64) -> f64 {
        self.cfg.dt * peak_speed * self.cfg.h.max(self.cfg.w) as f64 / (2.0 * std::f64::consts::PI)
    }

    /// Advance `omega_hat` by one step of size `dt`.
    pub fn step(&mut self, omega_hat: &mut [Complex64]) -> Result<()> {
        let dt = self.cfg.dt;
        let (n0, peak) = self.rhs(omega_hat);
        let courant = self.courant(peak);
        if !(courant < 1.0) {
            return Err(Error::Cfl {
                step: self.steps,
                courant,
            });
        }
        let predictor: Vec<Complex64> = omega_hat
            .iter()
            .zip(&n0)
            .zip(&self.decay)
            .map(|((w, n), e)| (w + n * dt) * *e)
            .collect();
        let (n1, _) = self.rhs(&predictor);
        for i in 0..omega_hat.len() {
            let e = self.decay[i];
            omega_hat[i] = omega_hat[i] * e + (n0[i] * e + n1[i]) * (0.5 * dt);
        }
        self.steps += 1;
        Ok(())
    }

    /// Kinetic energy `½ <|u|^2>` (domain mean).
    pub fn kinetic_energy(&self, omega_hat: &[Complex64]) -> f64 {
        let norm = ((self.cfg.h * self.cfg.w) as f64).powi(2);
        0.5 * omega_hat
            .iter()
            .zip(&self.inv_k2)
            .map(|(w, k)| w.norm_sqr() * k)
            .sum::<f64>()
            / norm
    }

    pub fn to_physical(&self, omega_hat: &[Complex64]) -> Vec<f64> {
        self.fft.inverse_real(omega_hat.to_vec()).0
    }

    pub fn to_spectral(&self, omega: &[f64]) -> Vec<Complex64> {
        self.fft.forward_real(omega)
    }

    /// Gaussian random vorticity with power `(|k|^2 + τ^2)^(-α)`, zero mean,
    /// restricted to the dealiased band and scaled to unit RMS.
    pub fn random_initial(&self, rng: &mut impl Rng) -> Vec<Complex64> {
        const TAU: f64 = 3.0;
        const ALPHA: f64 = 2.0;
        let (h, w) = (self.cfg.h, self.cfg.w);
        let noise: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
        let mut spec = self.fft.forward_real(&noise);
        for r in 0..h {
            let ky = wavenumber(r, h) as f64;
            for c in 0..w {
                let kx = wavenumber(c, w) as f64;
                let i = r * w + c;
                let k2 = kx * kx + ky * ky;
                if k2 == 0.0 || !self.dealias[i] || r == h / 2 || c == w / 2 {
                    spec[i] = Complex64::new(0.0, 0.0);
                } else {
                    spec[i] *= (k2 + TAU * TAU).powf(-ALPHA / 2.0);
                }
            }
        }
        let field = self.fft.inverse_real(spec).0;
        let rms = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt();
        let scaled: Vec<f64> = field.iter().map(|v| v / rms).collect();
        self.fft.forward_real(&scaled)
    }
}

/// Single step with a freshly planned solver.
pub fn ns_step(vorticity_hat: &[Complex64], cfg: &NsConfig) -> Result<Vec<Complex64>> {
    if vorticity_hat.len() != cfg.h * cfg.w {
        return Err(Error::Shape(format!(
            "spectrum has {} bins, grid is {}x{}",
            vorticity_hat.len(),
            cfg.h,
            cfg.w
        )));
    }
    let mut solver = NsSolver::new(cfg)?;
    let mut out = vorticity_hat.to_vec();
    solver.step(&mut out)?;
    Ok(out)
}

const BLOWUP_LIMIT: f64 = 1e6;
const MAX_ATTEMPTS: u64 = 8;

/// Simulate sequence `index`: `frames` snapshots of `[H, W]` vorticity,
/// one every `steps_per_frame` steps after spin-up.
pub fn simulate_sequence(cfg: &NsConfig, index: u64, frames: usize) -> Result<Vec<f64>> {
    let mut solver = NsSolver::new(cfg)?;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng::stream(cfg.seed, &[rng::tag::NS_SEQUENCE, index, attempt]);
        let mut omega = solver.random_initial(&mut rng);
        match run_frames(&mut solver, &mut omega, frames)? {
            Some(data) => return Ok(data),
            None => warn!(
                "sequence {index}: vorticity exceeded {BLOWUP_LIMIT:e} on attempt {attempt}, regenerating"
            ),
        }
    }
    Err(Error::NonFinite(format!(
        "sequence {index} blew up on {MAX_ATTEMPTS} attempts"
    )))
}

fn run_frames(solver: &mut NsSolver, omega: &mut [Complex64], frames: usize) -> Result<Option<Vec<f64>>> {
    let cfg = solver.config().clone();
    for _ in 0..cfg.spinup_steps {
        solver.step(omega)?;
    }
    let mut data = Vec::with_capacity(frames * cfg.h * cfg.w);
    for f in 0..frames {
        if f > 0 {
            for _ in 0..cfg.steps_per_frame {
                solver.step(omega)?;
            }
        }
        let field = solver.to_physical(omega);
        if field.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT) {
            return Ok(None);
        }
        data.extend(field);
    }
    Ok(Some(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unforced(h: usize, w: usize) -> NsConfig {
        NsConfig {
            h,
            w,
            viscosity: 1e-3,
            forcing_amplitude: 0.0,
            dt: 0.01,
            steps_per_frame: 1,
            spinup_steps: 0,
            seed: 3,
        }
    }

    fn assert_hermitian(spec: &[Complex64], h: usize, w: usize) {
        let scale = spec.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
        for r in 0..h {
            for c in 0..w {
                let a = spec[r * w + c];
                let b = spec[((h - r) % h) * w + (w - c) % w].conj();
                assert!((a - b).norm() < 1e-10 * scale, "bin ({r},{c})");
            }
        }
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let cfg = unforced(16, 16);
        let zero = vec![Complex64::new(0.0, 0.0); 256];
        let out = ns_step(&zero, &cfg).unwrap();
        assert!(out.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn taylor_green_decays_analytically() {
        let cfg = unforced(32, 32);
        let mut solver = NsSolver::new(&cfg).unwrap();
        let kappa = 2.0;
        let field: Vec<f64> = (0..1024)
            .map(|i| {
                let (r, c) = (i / 32, i % 32);
                let x = 2.0 * PI * c as f64 / 32.0;
                let y = 2.0 * PI * r as f64 / 32.0;
                2.0 * kappa * (kappa * x).cos() * (kappa * y).cos()
            })
            .collect();
        let mut omega = solver.to_spectral(&field);
        let a0 = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for n in 1..=100 {
            solver.step(&mut omega).unwrap();
            let now = solver.to_physical(&omega);
            let amp = now.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let expected = a0 * (-2.0 * cfg.viscosity * kappa * kappa * n as f64 * cfg.dt).exp();
            assert!((amp - expected).abs() / expected < 1e-2, "step {n}");
        }
    }

    #[test]
    fn unforced_energy_never_increases_and_stays_hermitian() {
        let cfg = unforced(32, 32);
        let mut solver = NsSolver::new(&cfg).unwrap();
        let mut omega = solver.random_initial(&mut rng::stream(9, &[0]));
        let mut e_prev = solver.kinetic_energy(&omega);
        for step in 0..500 {
            solver.step(&mut omega).unwrap();
            let e = solver.kinetic_energy(&omega);
            assert!(e <= e_prev, "energy rose at step {step}: {e_prev} -> {e}");
            e_prev = e;
        }
        assert_hermitian(&omega, 32, 32);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let mut cfg = unforced(32, 32);
        cfg.dt = 2.0;
        let solver = NsSolver::new(&cfg).unwrap();
        let omega: Vec<Complex64> = solver
            .random_initial(&mut rng::stream(1, &[0]))
            .into_iter()
            .map(|c| c * 50.0)
            .collect();
        assert!(matches!(ns_step(&omega, &cfg), Err(Error::Cfl { .. })));
    }

    #[test]
    fn config_is_validated() {
        let mut cfg = NsConfig::default();
        cfg.viscosity = 0.0;
        assert!(NsSolver::new(&cfg).is_err());
        cfg = NsConfig::default();
        cfg.h = 24;
        assert!(NsSolver::new(&cfg).is_err());
    }
}
