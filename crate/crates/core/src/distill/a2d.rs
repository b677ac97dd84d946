//! Adaptive multi-teacher gradient weighting.
//!
//! Each teacher contributes a gradient `g_m` of its own per-teacher loss.
//! The weights minimize `|sum_m a_m g_m|^2 / 2` over the capped simplex
//! `{a : sum a = 1, 0 <= a_m <= C}`, and the student descends along the
//! resulting min-norm combination.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParameterSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2DConfig {
    pub cap: f64,
    pub lr: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for A2DConfig {
    fn default() -> Self {
        Self {
            cap: 0.7,
            lr: 1e-4,
            tolerance: 1e-8,
            max_iters: 500,
        }
    }
}

impl A2DConfig {
    pub fn validate(&self, teachers: usize) -> Result<()> {
        if !(self.cap > 0.0 && self.cap <= 1.0) {
            return Err(Error::Config(format!("cap must lie in (0, 1], got {}", self.cap)));
        }
        if !(self.lr > 0.0) || !(self.tolerance > 0.0) || self.max_iters == 0 {
            return Err(Error::Config("lr, tolerance and max_iters must be positive".into()));
        }
        check_cap(teachers, self.cap)
    }
}

fn check_cap(m: usize, cap: f64) -> Result<()> {
    // Allow for rounding in caps such as 1/3.
    if m == 0 || (m as f64) * cap < 1.0 - 1e-12 {
        return Err(Error::InfeasibleCap { m, cap });
    }
    Ok(())
}

/// Euclidean projection onto `{a : sum a = 1, 0 <= a_i <= cap}`.
///
/// The solution is `clip(v_i - tau, 0, cap)` for the unique shift `tau`
/// making the entries sum to one. The sum is piecewise linear and
/// non-increasing in `tau` with breakpoints at `v_i` and `v_i - cap`, so
/// `tau` is found exactly by scanning the sorted breakpoints.
pub fn project_capped_simplex(v: &[f64], cap: f64) -> Result<Vec<f64>> {
    check_cap(v.len(), cap)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("projection input".into()));
    }
    let clipped_sum = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, cap)).sum::<f64>();
    let mut bps: Vec<f64> = v.iter().flat_map(|&x| [x, x - cap]).collect();
    bps.sort_by(f64::total_cmp);
    // clipped_sum(bps[0]) = M * cap >= 1 and clipped_sum(last) = 0.
    let mut tau = bps[0];
    for pair in bps.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let (s_lo, s_hi) = (clipped_sum(lo), clipped_sum(hi));
        if s_hi <= 1.0 {
            tau = if s_lo == s_hi { lo } else { lo + (s_lo - 1.0) * (hi - lo) / (s_lo - s_hi) };
            break;
        }
    }
    Ok(v.iter().map(|x| (x - tau).clamp(0.0, cap)).collect())
}

/// Gram matrix `G[i][j] = <g_i, g_j>`.
pub fn gram(grads: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = grads.len();
    if m == 0 {
        return Err(Error::Config("no gradients to weight".into()));
    }
    let p = grads[0].len();
    if grads.iter().any(|g| g.len() != p) {
        return Err(Error::Shape("gradients differ in length".into()));
    }
    if grads.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("teacher gradient".into()));
    }
    let mut g = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let d: f64 = grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum();
            g[i][j] = d;
            g[j][i] = d;
        }
    }
    Ok(g)
}

/// `a^T G a / 2`.
pub fn a2d_objective(gram: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, row) in gram.iter().enumerate() {
        for (j, g) in row.iter().enumerate() {
            acc += alpha[i] * g * alpha[j];
        }
    }
    0.5 * acc
}

fn mat_vec(g: &[Vec<f64>], a: &[f64]) -> Vec<f64> {
    g.iter().map(|row| row.iter().zip(a).map(|(x, y)| x * y).sum()).collect()
}

/// Largest eigenvalue of the Gram matrix restricted to the simplex tangent
/// space, by power iteration. This is the Lipschitz constant of the
/// objective's gradient along feasible directions.
fn tangent_lipschitz(g: &[Vec<f64>]) -> f64 {
    let m = g.len();
    let center = |v: &mut Vec<f64>| {
        let mean = v.iter().sum::<f64>() / m as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    };
    let mut v: Vec<f64> = (0..m).map(|i| 1.0 + i as f64 * 0.618).collect();
    center(&mut v);
    let mut lambda = 0.0;
    for _ in 0..200 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let mut w = mat_vec(g, &v);
        center(&mut w);
        let next = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        v = w;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0)
}

/// Min-norm weights on the capped simplex by accelerated projected
/// gradient descent on the `M x M` Gram matrix.
pub fn solve_a2d_weights(grads: &[Vec<f64>], cfg: &A2DConfig) -> Result<Vec<f64>> {
    let g = gram(grads)?;
    solve_gram(&g, cfg)
}

pub fn solve_gram(g: &[Vec<f64>], cfg: &A2DConfig) -> Result<Vec<f64>> {
    let m = g.len();
    check_cap(m, cfg.cap)?;
    let start = project_capped_simplex(&vec![1.0 / m as f64; m], cfg.cap)?;
    if m == 1 {
        return Ok(start);
    }
    // Power iteration can undershoot slightly; pad the estimate.
    let l = tangent_lipschitz(g) * 1.01;
    let scale = g.iter().enumerate().map(|(i, r)| r[i]).fold(0.0, f64::max);
    if l <= 1e-14 * scale.max(1e-300) {
        return Ok(start);
    }
    let step = 1.0 / l;
    let mut x = start.clone();
    let mut y = start;
    let mut t = 1.0f64;
    let mut f_prev = a2d_objective(g, &x);
    for _ in 0..cfg.max_iters {
        let grad = mat_vec(g, &y);
        let target: Vec<f64> = y.iter().zip(&grad).map(|(a, d)| a - step * d).collect();
        let x_next = project_capped_simplex(&target, cfg.cap)?;
        let f_next = a2d_objective(g, &x_next);
        let moved = x_next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if f_next > f_prev {
            // Adaptive restart keeps the iteration monotone.
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        y = x_next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + momentum * (a - b))
            .collect();
        x = x_next;
        t = t_next;
        f_prev = f_next;
        if moved < cfg.tolerance {
            break;
        }
    }
    Ok(x)
}

/// Per-teacher gradients and their weighted combination.
#[derive(Clone, Debug)]
pub struct GradientBundle {
    pub g: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// Descent direction `-sum_m alpha_m g_m`.
    pub d: Vec<f64>,
}

impl GradientBundle {
    pub fn new(g: Vec<Vec<f64>>, cfg: &A2DConfig) -> Result<Self> {
        let alpha = solve_a2d_weights(&g, cfg)?;
        let mut d = vec![0.0; g[0].len()];
        for (a, gm) in alpha.iter().zip(&g) {
            for (di, gi) in d.iter_mut().zip(gm) {
                *di -= a * gi;
            }
        }
        Ok(Self { g, alpha, d })
    }

    pub fn d_norm(&self) -> f64 {
        self.d.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Result of weighting one batch's per-teacher gradients.
#[derive(Clone, Debug)]
pub struct A2DStep {
    pub teacher_losses: Vec<f64>,
    pub alpha: Vec<f64>,
    pub d_norm: f64,
    /// `sum_m alpha_m g_m`, shaped like the student parameters. The update
    /// moves against it, i.e. along `d`.
    pub combined_grad: ParameterSet,
}

/// Combine per-teacher `(loss, gradient)` pairs into one update direction.
pub fn a2d_step(per_teacher: &[(f64, ParameterSet)], cfg: &A2DConfig) -> Result<A2DStep> {
    if per_teacher.is_empty() {
        return Err(Error::Config("no teachers".into()));
    }
    if let Some((i, _)) = per_teacher.iter().enumerate().find(|(_, (l, _))| !l.is_finite()) {
        return Err(Error::NonFinite(format!("loss of teacher {i}")));
    }
    let flat: Vec<Vec<f64>> = per_teacher.iter().map(|(_, g)| g.flatten()).collect();
    let bundle = GradientBundle::new(flat, cfg)?;
    let mut combined_grad = per_teacher[0].1.zeros_like();
    let neg: Vec<f64> = bundle.d.iter().map(|x| -x).collect();
    combined_grad.unflatten(&neg)?;
    Ok(A2DStep {
        teacher_losses: per_teacher.iter().map(|(l, _)| *l).collect(),
        d_norm: bundle.d_norm(),
        alpha: bundle.alpha,
        combined_grad,
    })
}

/// Appends one row per A2D step: `step, loss_0.., alpha_0.., d_norm`.
pub struct DiagnosticsWriter {
    out: std::io::BufWriter<std::fs::File>,
    teachers: usize,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path, teachers: usize) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut header = vec!["step".to_string()];
        header.extend((0..teachers).map(|m| format!("loss_{m}")));
        header.extend((0..teachers).map(|m| format!("alpha_{m}")));
        header.push("d_norm".into());
        writeln!(out, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        Ok(Self { out, teachers })
    }

    /// Continue an existing file without rewriting its header.
    pub fn append(path: &Path, teachers: usize) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: std::io::BufWriter::new(file),
            teachers,
        })
    }

    pub fn record(&mut self, step: u64, s: &A2DStep) -> Result<()> {
        if s.alpha.len() != self.teachers {
            return Err(Error::Shape(format!("{} weights for {} teachers", s.alpha.len(), self.teachers)));
        }
        let mut row = vec![step.to_string()];
        row.extend(s.teacher_losses.iter().map(|v| format!("{v:.9e}")));
        row.extend(s.alpha.iter().map(|v| format!("{v:.9e}")));
        row.push(format!("{:.9e}", s.d_norm));
        writeln!(self.out, "{}", row.join(",")).map_err(|e| Error::io("a2d diagnostics", e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io("a2d diagnostics", e))
    }
}
