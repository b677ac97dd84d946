//! Named building blocks over a [`Graph`]. A block called `name` reads its
//! parameters as `{name}.w`, `{name}.b`, and so on.

use log::warn;
use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{uniform_init, ParameterSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sequence length above which attention logs a quadratic-cost warning.
pub const ATTENTION_WARN_TOKENS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

fn apply(g: &mut Graph, x: Var, act: Activation) -> Var {
    match act {
        Activation::Gelu => g.gelu(x),
        Activation::Identity => x,
    }
}

pub fn init_conv(p: &mut ParameterSet, name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) {
    p.insert(format!("{name}.w"), uniform_init(&[cout, cin, k, k], cin * k * k, rng));
    p.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
}

pub fn init_conv_transpose(p: &mut ParameterSet, name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) {
    p.insert(format!("{name}.w"), uniform_init(&[cin, cout, k, k], cin * k * k, rng));
    p.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
}

pub fn init_dense(p: &mut ParameterSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    p.insert(format!("{name}.w"), uniform_init(&[fan_in, fan_out], fan_in, rng));
    p.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

pub fn init_norm(p: &mut ParameterSet, name: &str, d: usize) {
    p.insert(format!("{name}.gamma"), Tensor::full(&[d], 1.0));
    p.insert(format!("{name}.beta"), Tensor::zeros(&[d]));
}

/// Query, key and value projections without bias: `3 d^2` parameters.
pub fn init_attention(p: &mut ParameterSet, name: &str, d: usize, rng: &mut impl Rng) {
    for m in ["wq", "wk", "wv"] {
        p.insert(format!("{name}.{m}"), uniform_init(&[d, d], d, rng));
    }
}

pub fn conv(g: &mut Graph, p: &ParameterSet, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    let k = g.shape(w)[2];
    g.conv2d(x, w, Some(b), stride, (k - 1) / 2)
}

/// Transposed convolution upsampling by `stride`; padding is chosen so the
/// output side is exactly `stride` times the input side.
pub fn conv_up(g: &mut Graph, p: &ParameterSet, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    let k = g.shape(w)[2];
    if k < stride || (k - stride) % 2 != 0 {
        return Err(Error::Config(format!(
            "transposed kernel {k} cannot upsample exactly by {stride}"
        )));
    }
    g.conv_transpose2d(x, w, Some(b), stride, (k - stride) / 2)
}

pub fn dense(g: &mut Graph, p: &ParameterSet, name: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    g.dense(x, w, Some(b))
}

/// Layer norm over the last axis.
pub fn norm_last(g: &mut Graph, p: &ParameterSet, name: &str, x: Var) -> Result<Var> {
    let gamma = g.param(p, &format!("{name}.gamma"))?;
    let beta = g.param(p, &format!("{name}.beta"))?;
    g.layer_norm(x, gamma, beta)
}

/// Layer norm over the channel axis of a `[B, D, H, W]` tensor.
pub fn norm_channels(g: &mut Graph, p: &ParameterSet, name: &str, x: Var) -> Result<Var> {
    let t = g.permute(x, &[0, 2, 3, 1])?;
    let n = norm_last(g, p, name, t)?;
    g.permute(n, &[0, 3, 1, 2])
}

/// `σ(Conv2D(Z; W_h) + b_h)` with same padding.
pub fn conv_block(g: &mut Graph, p: &ParameterSet, name: &str, z: Var, act: Activation) -> Result<Var> {
    let k = p
        .get(&format!("{name}.w"))
        .map(|w| w.shape()[2])
        .ok_or_else(|| Error::Config(format!("missing parameter {name}.w")))?;
    if k % 2 == 0 {
        return Err(Error::Config(format!("conv block kernel must be odd, got {k}")));
    }
    let y = conv(g, p, name, z, 1)?;
    Ok(apply(g, y, act))
}

/// Multi-head self-attention over the `H x W` positions of a `[B, D, H, W]`
/// latent, `softmax(Q K^T / sqrt(d_head)) V`.
pub fn attention_block(g: &mut Graph, p: &ParameterSet, name: &str, z: Var, heads: usize) -> Result<Var> {
    let s = g.shape(z).to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!("attention expects [B, D, H, W], got {:?}", s)));
    }
    let (b, d, h, w) = (s[0], s[1], s[2], s[3]);
    let n = h * w;
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("{d} channels do not split into {heads} heads")));
    }
    if n > ATTENTION_WARN_TOKENS {
        warn!("attention over {n} positions: cost grows as N^2 d");
    }
    let dh = d / heads;
    let t = g.permute(z, &[0, 2, 3, 1])?;
    let tokens = g.reshape(t, &[b, n, d])?;
    let proj = |g: &mut Graph, m: &str| -> Result<Var> {
        let w = g.param(p, &format!("{name}.{m}"))?;
        let y = g.dense(tokens, w, None)?;
        if heads == 1 {
            return Ok(y);
        }
        let y = g.reshape(y, &[b, n, heads, dh])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        g.reshape(y, &[b * heads, n, dh])
    };
    let q = proj(g, "wq")?;
    let k = proj(g, "wk")?;
    let v = proj(g, "wv")?;
    let mut o = g.attention(q, k, v, 1.0 / (dh as f64).sqrt())?;
    if heads > 1 {
        o = g.reshape(o, &[b, heads, n, dh])?;
        o = g.permute(o, &[0, 2, 1, 3])?;
    }
    let o = g.reshape(o, &[b, h, w, d])?;
    g.permute(o, &[0, 3, 1, 2])
}

/// `LayerNorm(Z_high + Z_low)` over channels.
pub fn latent_fuse(g: &mut Graph, p: &ParameterSet, name: &str, z_high: Var, z_low: Var) -> Result<Var> {
    let sum = g.add(z_high, z_low)?;
    norm_channels(g, p, name, sum)
}
