//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its value. Nodes are appended in evaluation order, so walking the tape
//! backwards visits every node after all of its consumers.

use super::kernels::{self, Window};
use super::params::ParameterSet;
use crate::error::{Error, Result};
use crate::tensor::{invert_perm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: f64,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        weights: Vec<f64>,
        scale: f64,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Mean {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Gradients of every node reached by a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that collects a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to the named entry of a parameter set.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        let t = params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        let v = self.leaf(t.clone());
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// 2D cross-correlation. `x: [B, Cin, H, W]`, `w: [Cout, Cin, K, K]`,
    /// `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(shape_err(format!("conv2d input {:?} weight {:?}", xs, ws)));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[0], ws[2]);
        if ws[1] != cin {
            return Err(shape_err(format!(
                "conv2d channel mismatch: input has {cin}, kernel expects {}",
                ws[1]
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err(format!("conv2d bias {:?} for {cout} outputs", self.shape(b))));
            }
        }
        let g = Window::new(cin, h, wd, k, stride, pad)
            .ok_or_else(|| shape_err(format!("conv2d kernel {k} larger than padded input {h}x{wd}")))?;
        let mut out = vec![0.0; batch * cout * g.cols()];
        let mut cols = vec![0.0; g.rows() * g.cols()];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for n in 0..batch {
            kernels::im2col(&xv[n * cin * h * wd..(n + 1) * cin * h * wd], &g, &mut cols);
            let dst = &mut out[n * cout * g.cols()..(n + 1) * cout * g.cols()];
            kernels::gemm(cout, g.rows(), g.cols(), 1.0, wv, false, &cols, false, 0.0, dst);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), g.cols());
        }
        let value = Tensor::from_vec(&[batch, cout, g.oh, g.ow], out)?;
        let rg = self.rg(&[x, w]) || b.map_or(false, |b| self.rg(&[b]));
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Transposed convolution. `x: [B, Cin, H, W]`, `w: [Cin, Cout, K, K]`;
    /// output side is `(H - 1) * stride - 2 * pad + K`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(shape_err(format!("conv_transpose2d input {:?} weight {:?}", xs, ws)));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ws[1], ws[2]);
        if ws[0] != cin {
            return Err(shape_err(format!(
                "conv_transpose2d channel mismatch: input has {cin}, kernel expects {}",
                ws[0]
            )));
        }
        let oh = ((h - 1) * stride + k)
            .checked_sub(2 * pad)
            .ok_or_else(|| shape_err("conv_transpose2d padding too large"))?;
        let ow = ((wd - 1) * stride + k)
            .checked_sub(2 * pad)
            .ok_or_else(|| shape_err("conv_transpose2d padding too large"))?;
        let g = Window::new(cout, oh, ow, k, stride, pad)
            .filter(|g| g.oh == h && g.ow == wd)
            .ok_or_else(|| shape_err("conv_transpose2d geometry is not invertible"))?;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; batch * cout * oh * ow];
        let mut cols = vec![0.0; g.rows() * g.cols()];
        for n in 0..batch {
            // cols[cout*k*k, h*w] = W^T [cout*k*k, cin] x [cin, h*w]
            let xb = &xv[n * cin * h * wd..(n + 1) * cin * h * wd];
            kernels::gemm(g.rows(), cin, g.cols(), 1.0, wv, true, xb, false, 0.0, &mut cols);
            kernels::col2im(&cols, &g, &mut out[n * cout * oh * ow..(n + 1) * cout * oh * ow]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), oh * ow);
        }
        let value = Tensor::from_vec(&[batch, cout, oh, ow], out)?;
        let rg = self.rg(&[x, w]) || b.map_or(false, |b| self.rg(&[b]));
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, stride, pad }, rg))
    }

    /// Affine map over the last axis: `x: [.., In]`, `w: [In, Out]`, `b: [Out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let fan_in = *xs.last().ok_or_else(|| shape_err("dense on scalar"))?;
        if ws.len() != 2 || ws[0] != fan_in {
            return Err(shape_err(format!("dense input {:?} weight {:?}", xs, ws)));
        }
        let out_dim = ws[1];
        let rows = self.value(x).numel() / fan_in.max(1);
        let mut out = vec![0.0; rows * out_dim];
        kernels::gemm(
            rows,
            fan_in,
            out_dim,
            1.0,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != out_dim {
                return Err(shape_err("dense bias size"));
            }
            for row in out.chunks_exact_mut(out_dim) {
                for (o, bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = out_dim;
        let value = Tensor::from_vec(&shape, out)?;
        let rg = self.rg(&[x, w]) || b.map_or(false, |b| self.rg(&[b]));
        Ok(self.push(value, Op::Dense { x, w, b }, rg))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = *self.shape(x).last().ok_or_else(|| shape_err("layer_norm on scalar"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm affine size"));
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for i in 0..d {
                let xh = (row[i] - mean) * rs;
                xhat[r * d + i] = xh;
                out[r * d + i] = gv[i] * xh + bv[i];
            }
        }
        let value = Tensor::from_vec(self.shape(x), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::gelu);
        let rg = self.rg(&[x]);
        self.push(value, Op::Gelu { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale { x, s }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let value = self.value(x).permute(perm)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenate `[B, C1, ..]` and `[B, C2, ..]` along axis 1.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(shape_err(format!("concat {:?} with {:?}", sa, sb)));
        }
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1] * inner, sb[1] * inner);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for n in 0..sa[0] {
            out.extend_from_slice(&av[n * ca..(n + 1) * ca]);
            out.extend_from_slice(&bv[n * cb..(n + 1) * cb]);
        }
        let mut shape = sa;
        shape[1] += sb[1];
        let value = Tensor::from_vec(&shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// Scaled dot-product attention `softmax(q k^T * scale) v` over
    /// `[Bt, N, d]` operands.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: f64) -> Result<Var> {
        let qs = self.shape(q).to_vec();
        if qs.len() != 3 || self.shape(k) != qs.as_slice() || self.shape(v) != qs.as_slice() {
            return Err(shape_err(format!(
                "attention operands {:?} {:?} {:?}",
                qs,
                self.shape(k),
                self.shape(v)
            )));
        }
        let (bt, n, d) = (qs[0], qs[1], qs[2]);
        let mut weights = vec![0.0; bt * n * n];
        let mut out = vec![0.0; bt * n * d];
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        for b in 0..bt {
            let blk = b * n * d..(b + 1) * n * d;
            let wb = &mut weights[b * n * n..(b + 1) * n * n];
            kernels::gemm(n, d, n, scale, &qv[blk.clone()], false, &kv[blk.clone()], true, 0.0, wb);
            kernels::softmax_rows(wb, n);
            kernels::gemm(n, n, d, 1.0, wb, false, &vv[blk.clone()], false, 0.0, &mut out[blk]);
        }
        let value = Tensor::from_vec(&qs, out)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                weights,
                scale,
            },
            rg,
        ))
    }

    /// Attention weights of an attention node, `[Bt, N, N]`.
    pub fn attention_weights(&self, node: Var) -> Option<Tensor> {
        match &self.nodes[node.0].op {
            Op::Attention { q, weights, .. } => {
                let s = self.shape(*q);
                Tensor::from_vec(&[s[0], s[1], s[1]], weights.clone()).ok()
            }
            _ => None,
        }
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(&[x]);
        self.push(value, Op::Mean { x }, rg)
    }

    /// Parameter leaves created so far, by name.
    pub fn param_vars(&self) -> &[(String, Var)] {
        &self.params
    }

    /// Multiply-accumulate count of the recorded forward pass.
    ///
    /// Convolutions count `K^2 Cin Cout` per output (per input for transposed
    /// convolutions), dense layers `In Out` per row, and the attention core
    /// `N^2 d` per head group; elementwise operations are free.
    pub fn flops(&self) -> u64 {
        self.nodes
            .iter()
            .map(|node| match &node.op {
                Op::Conv2d { w, .. } => {
                    let ws = self.shape(*w);
                    let out = node.value.shape();
                    (ws[0] * ws[1] * ws[2] * ws[3] * out[0] * out[2] * out[3]) as u64
                }
                Op::ConvTranspose2d { x, w, .. } => {
                    let ws = self.shape(*w);
                    let xs = self.shape(*x);
                    (ws[0] * ws[1] * ws[2] * ws[3] * xs[0] * xs[2] * xs[3]) as u64
                }
                Op::Dense { w, .. } => {
                    let ws = self.shape(*w);
                    let rows = node.value.numel() / ws[1].max(1);
                    (rows * ws[0] * ws[1]) as u64
                }
                Op::Attention { q, .. } => {
                    let s = self.shape(*q);
                    (s[0] * s[1] * s[1] * s[2]) as u64
                }
                _ => 0,
            })
            .sum()
    }

    /// Reverse pass seeded with `d(loss)/d(var)` for each `(var, grad)` pair.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            if g.shape() != self.shape(*v) {
                return Err(shape_err(format!(
                    "seed gradient {:?} for node of shape {:?}",
                    g.shape(),
                    self.shape(*v)
                )));
            }
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &gout, &mut grads)?;
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let g = gout.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let cout = ws[0];
                let geo = Window::new(cin, h, wd, ws[2], *stride, *pad).expect("validated in forward");
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut cols = vec![0.0; geo.rows() * geo.cols()];
                let mut dw = vec![0.0; wv.len()];
                let mut dx = vec![0.0; xv.len()];
                let (need_x, need_w) = (self.needs(*x), self.needs(*w));
                for n in 0..batch {
                    let gb = &g[n * cout * geo.cols()..(n + 1) * cout * geo.cols()];
                    let xb = n * cin * h * wd..(n + 1) * cin * h * wd;
                    if need_w {
                        kernels::im2col(&xv[xb.clone()], &geo, &mut cols);
                        kernels::gemm(cout, geo.cols(), geo.rows(), 1.0, gb, false, &cols, true, 1.0, &mut dw);
                    }
                    if need_x {
                        kernels::gemm(geo.rows(), cout, geo.cols(), 1.0, wv, true, gb, false, 0.0, &mut cols);
                        kernels::col2im(&cols, &geo, &mut dx[xb]);
                    }
                }
                if need_x {
                    accumulate(grads, *x, Tensor::from_vec(xs, dx)?);
                }
                if need_w {
                    accumulate(grads, *w, Tensor::from_vec(ws, dw)?);
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    accumulate(grads, b, channel_sums(g, cout, geo.cols()));
                }
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let os = node.value.shape();
                let (cout, oh, ow) = (os[1], os[2], os[3]);
                let geo = Window::new(cout, oh, ow, ws[2], *stride, *pad).expect("validated in forward");
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut cols = vec![0.0; geo.rows() * geo.cols()];
                let mut dw = vec![0.0; wv.len()];
                let mut dx = vec![0.0; xv.len()];
                let (need_x, need_w) = (self.needs(*x), self.needs(*w));
                for n in 0..batch {
                    kernels::im2col(&g[n * cout * oh * ow..(n + 1) * cout * oh * ow], &geo, &mut cols);
                    let xb = n * cin * h * wd..(n + 1) * cin * h * wd;
                    if need_x {
                        // dx[cin, hw] = W[cin, cout*k*k] cols[cout*k*k, hw]
                        kernels::gemm(cin, geo.rows(), geo.cols(), 1.0, wv, false, &cols, false, 0.0, &mut dx[xb.clone()]);
                    }
                    if need_w {
                        kernels::gemm(cin, geo.cols(), geo.rows(), 1.0, &xv[xb], false, &cols, true, 1.0, &mut dw);
                    }
                }
                if need_x {
                    accumulate(grads, *x, Tensor::from_vec(xs, dx)?);
                }
                if need_w {
                    accumulate(grads, *w, Tensor::from_vec(ws, dw)?);
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    accumulate(grads, b, channel_sums(g, cout, oh * ow));
                }
            }
            Op::Dense { x, w, b } => {
                let ws = self.shape(*w);
                let (fan_in, out_dim) = (ws[0], ws[1]);
                let rows = g.len() / out_dim.max(1);
                if self.needs(*x) {
                    let mut dx = vec![0.0; rows * fan_in];
                    kernels::gemm(rows, out_dim, fan_in, 1.0, g, false, self.value(*w).data(), true, 0.0, &mut dx);
                    accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx)?);
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; fan_in * out_dim];
                    kernels::gemm(fan_in, rows, out_dim, 1.0, self.value(*x).data(), true, g, false, 0.0, &mut dw);
                    accumulate(grads, *w, Tensor::from_vec(ws, dw)?);
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut db = vec![0.0; out_dim];
                    for row in g.chunks_exact(out_dim) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, b, Tensor::from_vec(&[out_dim], db)?);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = self.shape(*gamma)[0];
                let gv = self.value(*gamma).data();
                let rows = g.len() / d;
                if self.needs(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let mut dxh = vec![0.0; d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        for i in 0..d {
                            dxh[i] = gr[i] * gv[i];
                        }
                        let m1 = dxh.iter().sum::<f64>() / d as f64;
                        let m2 = dxh.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for i in 0..d {
                            dx[r * d + i] = rstd[r] * (dxh[i] - m1 - xr[i] * m2);
                        }
                    }
                    accumulate(grads, *x, Tensor::from_vec(self.shape(*x), dx)?);
                }
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for i in 0..d {
                            dg[i] += g[r * d + i] * xhat[r * d + i];
                            db[i] += g[r * d + i];
                        }
                    }
                    if self.needs(*gamma) {
                        accumulate(grads, *gamma, Tensor::from_vec(&[d], dg)?);
                    }
                    if self.needs(*beta) {
                        accumulate(grads, *beta, Tensor::from_vec(&[d], db)?);
                    }
                }
            }
            Op::Gelu { x } => {
                if self.needs(*x) {
                    let dx = self
                        .value(*x)
                        .zip_map(gout, |xv, gv| kernels::gelu_grad(xv) * gv)?;
                    accumulate(grads, *x, dx);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    accumulate(grads, *a, gout.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, gout.clone());
                }
            }
            Op::Scale { x, s } => {
                if self.needs(*x) {
                    accumulate(grads, *x, gout.scale(*s));
                }
            }
            Op::Reshape { x } => {
                if self.needs(*x) {
                    accumulate(grads, *x, gout.clone().reshape(self.shape(*x))?);
                }
            }
            Op::Permute { x, perm } => {
                if self.needs(*x) {
                    accumulate(grads, *x, gout.permute(&invert_perm(perm))?);
                }
            }
            Op::Concat { a, b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let inner: usize = sa[2..].iter().product();
                let (ca, cb) = (sa[1] * inner, sb[1] * inner);
                let mut da = Vec::with_capacity(sa[0] * ca);
                let mut db = Vec::with_capacity(sb[0] * cb);
                for n in 0..sa[0] {
                    let base = n * (ca + cb);
                    da.extend_from_slice(&g[base..base + ca]);
                    db.extend_from_slice(&g[base + ca..base + ca + cb]);
                }
                if self.needs(*a) {
                    accumulate(grads, *a, Tensor::from_vec(sa, da)?);
                }
                if self.needs(*b) {
                    accumulate(grads, *b, Tensor::from_vec(sb, db)?);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                weights,
                scale,
            } => {
                let s = self.shape(*q);
                let (bt, n, d) = (s[0], s[1], s[2]);
                let (qv, kv, vv) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![0.0; qv.len()];
                let mut dk = vec![0.0; kv.len()];
                let mut dv = vec![0.0; vv.len()];
                let mut da = vec![0.0; n * n];
                for b in 0..bt {
                    let blk = b * n * d..(b + 1) * n * d;
                    let a = &weights[b * n * n..(b + 1) * n * n];
                    let gb = &g[blk.clone()];
                    // dV = A^T dO
                    kernels::gemm(n, n, d, 1.0, a, true, gb, false, 0.0, &mut dv[blk.clone()]);
                    // dA = dO V^T, then softmax backward in place
                    kernels::gemm(n, d, n, 1.0, gb, false, &vv[blk.clone()], true, 0.0, &mut da);
                    for (drow, arow) in da.chunks_exact_mut(n).zip(a.chunks_exact(n)) {
                        let dot: f64 = drow.iter().zip(arow).map(|(x, y)| x * y).sum();
                        for (dv_, av) in drow.iter_mut().zip(arow) {
                            *dv_ = av * (*dv_ - dot);
                        }
                    }
                    kernels::gemm(n, n, d, *scale, &da, false, &kv[blk.clone()], false, 0.0, &mut dq[blk.clone()]);
                    kernels::gemm(n, n, d, *scale, &da, true, &qv[blk.clone()], false, 0.0, &mut dk[blk]);
                }
                for (var, grad) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.needs(var) {
                        accumulate(grads, var, Tensor::from_vec(s, grad)?);
                    }
                }
            }
            Op::Mean { x } => {
                if self.needs(*x) {
                    let xs = self.shape(*x);
                    let n = self.value(*x).numel().max(1) as f64;
                    accumulate(grads, *x, Tensor::full(xs, g[0] / n));
                }
            }
        }
        Ok(())
    }

    /// Collect gradients of every parameter leaf into a set shaped like
    /// `params`; parameters the pass never reached get zeros.
    pub fn param_grads(&self, grads: &Gradients, params: &ParameterSet) -> ParameterSet {
        let mut out = params.zeros_like();
        for (name, var) in &self.params {
            if let (Some(g), Some(slot)) = (grads.get(*var), out.get_mut(name)) {
                slot.add_assign(g).expect("parameter gradient shape");
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g).expect("gradient shape"),
        slot @ None => *slot = Some(g),
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    let c = bias.len();
    for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
        let b = bias[i % c];
        for v in chunk.iter_mut() {
            *v += b;
        }
    }
}

fn channel_sums(g: &[f64], channels: usize, plane: usize) -> Tensor {
    let mut db = vec![0.0; channels];
    for (i, chunk) in g.chunks_exact(plane).enumerate() {
        db[i % channels] += chunk.iter().sum::<f64>();
    }
    Tensor::from_vec(&[channels], db).expect("bias length")
}
