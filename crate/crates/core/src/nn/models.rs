//! The model zoo. Every model maps `[B, I_l*C, H, W]` to `[B, Δ*C, H, W]`
//! and exposes one latent feature map for latent-tap distillation.

use rand::Rng;

use super::graph::{Graph, Var};
use super::layers::{
    attention_block, conv, conv_block, conv_up, dense, init_attention, init_conv, init_conv_transpose,
    init_dense, init_norm, latent_fuse, norm_last, Activation,
};
use super::params::ParameterSet;
use super::spec::{ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub output: Var,
    pub latent: Var,
}

/// Branch of a teacher latent block, for frequency-response probing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Conv,
    Attention,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    params: ParameterSet,
}

impl Network {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, &[rng::tag::PARAM_INIT, spec.kind as u64]);
        let params = init_params(&spec, &mut rng);
        Ok(Self { spec, params })
    }

    /// Wrap existing parameters, checking names and shapes against the spec.
    pub fn from_parts(spec: ModelSpec, params: ParameterSet) -> Result<Self> {
        spec.validate()?;
        let reference = init_params(&spec, &mut rng::stream(0, &[]));
        if reference.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "spec expects {} tensors, got {}",
                reference.len(),
                params.len()
            )));
        }
        for (name, t) in reference.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has shape {:?}, spec expects {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing tensor {name}"))),
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<ForwardOutput> {
        forward_with(&self.spec, &self.params, g, x)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.predict_with_latent(x)?.0)
    }

    pub fn predict_with_latent(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = self.forward(&mut g, xv)?;
        Ok((g.value(out.output).clone(), g.value(out.latent).clone()))
    }

    /// Predict in chunks of `batch` samples along the leading axis.
    pub fn predict_batched(&self, x: &Tensor, batch: usize) -> Result<Tensor> {
        Ok(self.predict_batched_with_latent(x, batch)?.0)
    }

    pub fn predict_batched_with_latent(&self, x: &Tensor, batch: usize) -> Result<(Tensor, Tensor)> {
        let n = x.shape().first().copied().unwrap_or(0);
        if n == 0 || batch == 0 {
            return Err(Error::Shape("prediction needs a non-empty batch".into()));
        }
        let (mut outs, mut lats) = (Vec::new(), Vec::new());
        for start in (0..n).step_by(batch) {
            let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
            let (y, z) = self.predict_with_latent(&x.gather_axis0(&idx))?;
            outs.push(y);
            lats.push(z);
        }
        Ok((Tensor::concat_axis0(&outs)?, Tensor::concat_axis0(&lats)?))
    }

    pub fn count_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Multiply-accumulates of one forward pass on `input_shape`.
    pub fn count_flops(&self, input_shape: &[usize]) -> Result<u64> {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(input_shape));
        self.forward(&mut g, x)?;
        Ok(g.flops())
    }

    /// Run one branch of latent block `block` of an st_alternet teacher on a
    /// latent-shaped input.
    pub fn run_branch(&self, branch: Branch, block: usize, z: &Tensor) -> Result<Tensor> {
        if self.spec.kind != ModelKind::StAlternet || block >= self.spec.depth {
            return Err(Error::Config(format!(
                "{} has no latent block {block}",
                self.spec.kind.name()
            )));
        }
        let mut g = Graph::new();
        let zv = g.input(z.clone());
        let out = match branch {
            Branch::Conv => conv_block(&mut g, &self.params, &format!("latent.{block}.conv"), zv, Activation::Gelu)?,
            Branch::Attention => {
                attention_block(&mut g, &self.params, &format!("latent.{block}.attn"), zv, self.spec.heads)?
            }
        };
        Ok(g.value(out).clone())
    }
}

/// Forward pass of `spec` reading weights from `params`, which may hold
/// extra entries (such as a distillation projection head).
pub fn forward_with(spec: &ModelSpec, params: &ParameterSet, g: &mut Graph, x: Var) -> Result<ForwardOutput> {
    let s = g.shape(x);
    let want = [spec.in_channels(), spec.height, spec.width];
    if s.len() != 4 || s[1..] != want {
        return Err(Error::Shape(format!(
            "{} expects input [B, {}, {}, {}], got {:?}",
            spec.kind.name(),
            want[0],
            want[1],
            want[2],
            s
        )));
    }
    let p = params;
    match spec.kind {
        ModelKind::StAlternet => st_alternet(spec, g, p, x),
        ModelKind::Simvp => simvp(spec, g, p, x),
        ModelKind::Unet => unet(spec, g, p, x),
        ModelKind::Resnet => resnet(spec, g, p, x),
        ModelKind::MlpMixer => mlp_mixer(spec, g, p, x),
    }
}

fn init_params(spec: &ModelSpec, rng: &mut impl Rng) -> ParameterSet {
    let mut p = ParameterSet::new();
    let (cin, cout, d, k) = (spec.in_channels(), spec.out_channels(), spec.hidden_dim, spec.kernel);
    match spec.kind {
        ModelKind::StAlternet | ModelKind::Simvp => {
            init_conv(&mut p, "enc.0", cin, d, k, rng);
            for i in 0..spec.n_down {
                init_conv(&mut p, &format!("enc.{}", i + 1), d, d, k, rng);
            }
            for r in 0..spec.depth {
                if spec.kind == ModelKind::StAlternet {
                    init_conv(&mut p, &format!("latent.{r}.conv"), d, d, k, rng);
                    init_attention(&mut p, &format!("latent.{r}.attn"), d, rng);
                    init_norm(&mut p, &format!("latent.{r}.norm"), d);
                } else {
                    init_conv(&mut p, &format!("trans.{r}"), d, d, k, rng);
                }
            }
            for i in 0..spec.n_down {
                init_conv_transpose(&mut p, &format!("dec.{i}"), d, d, spec.up_kernel, rng);
            }
            init_conv(&mut p, "head", d, cout, k, rng);
        }
        ModelKind::Unet => {
            init_conv(&mut p, "stem", cin, d, k, rng);
            for l in 0..spec.depth {
                let c = d << l;
                init_conv(&mut p, &format!("enc.{l}"), c, c, k, rng);
                init_conv(&mut p, &format!("down.{l}"), c, 2 * c, k, rng);
            }
            let top = d << spec.depth;
            init_conv(&mut p, "mid", top, top, k, rng);
            for l in (0..spec.depth).rev() {
                let c = d << l;
                init_conv_transpose(&mut p, &format!("up.{l}"), 2 * c, c, spec.up_kernel, rng);
                init_conv(&mut p, &format!("dec.{l}"), 2 * c, c, k, rng);
            }
            init_conv(&mut p, "head", d, cout, k, rng);
        }
        ModelKind::Resnet => {
            init_conv(&mut p, "stem", cin, d, k, rng);
            for r in 0..spec.depth {
                for layer in ["a", "b", "c"] {
                    init_conv(&mut p, &format!("block.{r}.{layer}"), d, d, k, rng);
                }
            }
            init_conv(&mut p, "head", d, cout, k, rng);
        }
        ModelKind::MlpMixer => {
            let patch = 1usize << spec.n_down;
            let tokens = (spec.height / patch) * (spec.width / patch);
            init_conv(&mut p, "patch", cin, d, patch, rng);
            for r in 0..spec.depth {
                init_norm(&mut p, &format!("mix.{r}.norm1"), d);
                init_dense(&mut p, &format!("mix.{r}.tok1"), tokens, tokens, rng);
                init_dense(&mut p, &format!("mix.{r}.tok2"), tokens, tokens, rng);
                init_norm(&mut p, &format!("mix.{r}.norm2"), d);
                init_dense(&mut p, &format!("mix.{r}.ch1"), d, 2 * d, rng);
                init_dense(&mut p, &format!("mix.{r}.ch2"), 2 * d, d, rng);
            }
            init_norm(&mut p, "norm_out", d);
            init_conv_transpose(&mut p, "head", d, cout, patch, rng);
        }
    }
    p
}

/// Returns the latent and the full-resolution stem feature.
fn encoder(spec: &ModelSpec, g: &mut Graph, p: &ParameterSet, x: Var) -> Result<(Var, Var)> {
    let h = conv(g, p, "enc.0", x, 1)?;
    let stem = g.gelu(h);
    let mut h = stem;
    for i in 0..spec.n_down {
        let y = conv(g, p, &format!("enc.{}", i + 1), h, 2)?;
        h = g.gelu(y);
    }
    Ok((h, stem))
}

/// Upsamples back to the input grid; the stem feature is added before the
/// head so fine-scale detail does not have to pass through the latent.
fn decoder(spec: &ModelSpec, g: &mut Graph, p: &ParameterSet, z: Var, stem: Var) -> Result<Var> {
    let mut y = z;
    for i in 0..spec.n_down {
        let u = conv_up(g, p, &format!("dec.{i}"), y, 2)?;
        y = g.gelu(u);
    }
    let y = g.add(y, stem)?;
    conv(g, p, "head", y, 1)
}

fn st_alternet(spec: &ModelSpec, g: &mut Graph, p: &ParameterSet, x: Var) -> Result<ForwardOutput> {
    let (mut z, stem) = encoder(spec, g, p, x)?;
    for r in 0..spec.depth {
        let zh = conv_block(g, p, &format!("latent.{r}.conv"), z, Activation::Gelu)?;
        let zl = attention_block(g, p, &format!("latent.{r}.attn"), z, spec.heads)?;
        z = latent_fuse(g, p, &format!("latent.{r}.norm"), zh, zl)?;
    }
    let output = decoder(spec, g, p, z, stem)?;
    Ok(ForwardOutput { output, latent: z })
}

fn simvp(spec: &ModelSpec, g: &mut Graph, p: &ParameterSet, x: Var) -> Result<ForwardOutput> {
    let (mut z, stem) = encoder(spec, g, p, x)?;
    for r in 0..spec.depth {
        let t = conv_block(g, p, &format!("trans.{r}"), z, Activation::Gelu)?;
        z = g.add(z, t)?;
    }
    let output = decoder(spec, g, p, z, stem)?;
    Ok(ForwardOutput { output, latent: z })
}

fn unet(spec: &ModelSpec, g: &mut Graph, p: &ParameterSet, x: Var) -> Result<ForwardOutput> {
    let mut h = conv_block(g, p, "stem", x, Activation::Gelu)?;
    let mut skips = Vec::with_capacity(spec.depth);
    for l in 0..spec.depth {
        h = conv_block(g, p, &format!("enc.{l}"), h, Activation::Gelu)?;
        skips.push(h);
        let d = conv(g, p, &format!("down.{l}"), h, 2)?;
        h = g.gelu(d);
    }
    h = conv_block(g, p, "mid", h, Activation::Gelu)?;
    let latent = h;
    for l in (0..spec.depth).rev() {
        let u = conv_up(g, p, &format!("up.{l}"), h, 2)?;
        let u = g.gelu(u);
        let cat = g.concat_channels(u, skips[l])?;
        h = conv_block(g, p, &format!("dec.{l}"), cat, Activation::Gelu)?;
    }
    let output = conv(g, p, "head", h, 1)?;
    Ok(ForwardOutput { output, latent })
}

fn resnet(spec: &ModelSpec, g: &mut Graph, p: &ParameterSet, x: Var) -> Result<ForwardOutput> {
    let mut h = conv_block(g, p, "stem", x, Activation::Gelu)?;
    for r in 0..spec.depth {
        let t = conv_block(g, p, &format!("block.{r}.a"), h, Activation::Gelu)?;
        let t = conv_block(g, p, &format!("block.{r}.b"), t, Activation::Gelu)?;
        let t = conv(g, p, &format!("block.{r}.c"), t, 1)?;
        h = g.add(h, t)?;
    }
    let output = conv(g, p, "head", h, 1)?;
    Ok(ForwardOutput { output, latent: h })
}

fn mlp_mixer(spec: &ModelSpec, g: &mut Graph, p: &ParameterSet, x: Var) -> Result<ForwardOutput> {
    let patch = 1usize << spec.n_down;
    let b = g.shape(x)[0];
    let (hp, wp) = (spec.height / patch, spec.width / patch);
    let (n, d) = (hp * wp, spec.hidden_dim);
    let pw = g.param(p, "patch.w")?;
    let pb = g.param(p, "patch.b")?;
    let e = g.conv2d(x, pw, Some(pb), patch, 0)?;
    let e = g.permute(e, &[0, 2, 3, 1])?;
    let mut t = g.reshape(e, &[b, n, d])?;
    for r in 0..spec.depth {
        let u = norm_last(g, p, &format!("mix.{r}.norm1"), t)?;
        let u = g.permute(u, &[0, 2, 1])?;
        let u = dense(g, p, &format!("mix.{r}.tok1"), u)?;
        let u = g.gelu(u);
        let u = dense(g, p, &format!("mix.{r}.tok2"), u)?;
        let u = g.permute(u, &[0, 2, 1])?;
        t = g.add(t, u)?;
        let u = norm_last(g, p, &format!("mix.{r}.norm2"), t)?;
        let u = dense(g, p, &format!("mix.{r}.ch1"), u)?;
        let u = g.gelu(u);
        let u = dense(g, p, &format!("mix.{r}.ch2"), u)?;
        t = g.add(t, u)?;
    }
    let t = norm_last(g, p, "norm_out", t)?;
    let z = g.reshape(t, &[b, hp, wp, d])?;
    let latent = g.permute(z, &[0, 3, 1, 2])?;
    let output = conv_up(g, p, "head", latent, patch)?;
    Ok(ForwardOutput { output, latent })
}
