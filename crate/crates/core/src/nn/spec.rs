use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Conv encoder, alternating conv/attention latent evolution, deconv decoder.
    StAlternet,
    /// Pure convolutional encoder-translator-decoder.
    Simvp,
    Unet,
    Resnet,
    MlpMixer,
}

impl ModelKind {
    pub fn is_teacher(self) -> bool {
        matches!(self, ModelKind::StAlternet | ModelKind::Simvp)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::StAlternet => "st_alternet",
            ModelKind::Simvp => "simvp",
            ModelKind::Unet => "unet",
            ModelKind::Resnet => "resnet",
            ModelKind::MlpMixer => "mlp_mixer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "st_alternet" => ModelKind::StAlternet,
            "simvp" => ModelKind::Simvp,
            "unet" => ModelKind::Unet,
            "resnet" => ModelKind::Resnet,
            "mlp_mixer" => ModelKind::MlpMixer,
            other => return Err(Error::Config(format!("unknown model kind {other}"))),
        })
    }
}

pub const TEACHER_HIDDEN: usize = 32;
pub const STUDENT_WIDTH_RATIO: f64 = 0.25;

/// Architecture description.
///
/// `depth` counts latent fuse blocks (st_alternet), translator blocks
/// (simvp), resolution levels (unet), residual blocks (resnet) or mixer
/// blocks (mlp_mixer). `n_down` is the encoder downsampling depth; the
/// mixer uses patches of side `2^n_down`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub in_frames: usize,
    pub out_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub kernel: usize,
    pub heads: usize,
    pub n_down: usize,
    pub up_kernel: usize,
}

impl ModelSpec {
    /// Default spec for `kind` on the given problem shape. Students get
    /// `round(0.25 * 32)` hidden channels.
    pub fn default_for(
        kind: ModelKind,
        in_frames: usize,
        out_frames: usize,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Self {
        let student_hidden = (STUDENT_WIDTH_RATIO * TEACHER_HIDDEN as f64).round() as usize;
        let (hidden_dim, depth, up_kernel) = match kind {
            ModelKind::StAlternet => (TEACHER_HIDDEN, 4, 4),
            ModelKind::Simvp => (TEACHER_HIDDEN, 4, 4),
            ModelKind::Unet => (student_hidden, 2, 2),
            ModelKind::Resnet => (student_hidden, 3, 2),
            ModelKind::MlpMixer => (student_hidden, 2, 4),
        };
        Self {
            kind,
            in_frames,
            out_frames,
            channels,
            height,
            width,
            hidden_dim,
            depth,
            kernel: 3,
            heads: 4,
            n_down: 2,
            up_kernel,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_frames * self.channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_frames * self.channels
    }

    /// Spatial size of the latent grid.
    pub fn latent_grid(&self) -> (usize, usize) {
        let down = match self.kind {
            ModelKind::Resnet => 0,
            ModelKind::Unet => self.depth,
            _ => self.n_down,
        };
        (self.height >> down, self.width >> down)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.in_frames == 0 || self.out_frames == 0 || self.channels == 0 || self.hidden_dim == 0 {
            return fail("frames, channels and hidden_dim must be positive".into());
        }
        if self.kernel % 2 == 0 {
            return fail(format!("kernel must be odd, got {}", self.kernel));
        }
        let down = match self.kind {
            ModelKind::Resnet => 0,
            ModelKind::Unet => self.depth,
            _ => self.n_down,
        };
        let f = 1usize << down;
        if self.height % f != 0 || self.width % f != 0 || self.height < f || self.width < f {
            return Err(Error::Shape(format!(
                "spatial dims {}x{} not divisible by 2^{}",
                self.height, self.width, down
            )));
        }
        if self.kind == ModelKind::StAlternet && (self.heads == 0 || self.hidden_dim % self.heads != 0) {
            return fail(format!(
                "hidden_dim {} not divisible by {} heads",
                self.hidden_dim, self.heads
            ));
        }
        if matches!(self.kind, ModelKind::StAlternet | ModelKind::Simvp | ModelKind::Unet)
            && (self.up_kernel < 2 || self.up_kernel % 2 != 0)
            && down > 0
        {
            return fail(format!("up_kernel must be even and >= 2, got {}", self.up_kernel));
        }
        if self.kind == ModelKind::MlpMixer && self.up_kernel != f {
            return fail(format!(
                "mixer head kernel {} must equal the patch size {}",
                self.up_kernel, f
            ));
        }
        Ok(())
    }
}
