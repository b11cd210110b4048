//! Overlapping patch embedding and the all-MLP segmentation head.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::layers::{from_tokens, hw, to_tokens, Conv, Linear, Norm};
use crate::nn::params::{Bound, ParamBuilder};

/// Overlapping strided conv followed by a channel norm.
///
/// Stage 1 uses kernel 7 / stride 4, later stages kernel 3 / stride 2, which
/// gives cumulative strides 4, 8, 16, 32.
#[derive(Debug, Clone, Copy)]
pub struct PatchEmbed {
    pub conv: Conv,
    pub norm: Norm,
}

impl PatchEmbed {
    pub fn declare(pb: &mut ParamBuilder, name: &str, stage: usize, in_c: usize, out_c: usize) -> Self {
        let (k, stride) = if stage == 0 { (7, 4) } else { (3, 2) };
        Self {
            conv: Conv::declare(pb, &format!("{name}.proj"), in_c, out_c, k, stride, k / 2, 1),
            norm: Norm::declare(pb, &format!("{name}.norm"), out_c),
        }
    }

    pub fn stride(&self) -> usize {
        self.conv.stride
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, b, x)?;
        self.norm.forward_map(g, b, y)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv.macs(h, w)
    }
}

/// Projects each stage to a common width, upsamples to the stage-1 grid,
/// concatenates, fuses and classifies, then upsamples by 4.
#[derive(Debug, Clone)]
pub struct MlpDecoder {
    pub embed_dim: usize,
    pub num_classes: usize,
    pub proj: Vec<Linear>,
    pub fuse: Linear,
    pub classify: Linear,
}

impl MlpDecoder {
    pub fn declare(pb: &mut ParamBuilder, name: &str, stage_channels: &[usize], embed_dim: usize, num_classes: usize) -> Self {
        let proj = stage_channels
            .iter()
            .enumerate()
            .map(|(l, &c)| Linear::declare(pb, &format!("{name}.proj{}", l + 1), c, embed_dim))
            .collect();
        Self {
            embed_dim,
            num_classes,
            proj,
            fuse: Linear::declare(pb, &format!("{name}.fuse"), embed_dim * stage_channels.len(), embed_dim),
            classify: Linear::declare(pb, &format!("{name}.classify"), embed_dim, num_classes),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, features: &[Var]) -> Result<Var> {
        if features.len() != self.proj.len() {
            return Err(Error::dim(
                "stages",
                format!("decoder expects {} stage features, got {}", self.proj.len(), features.len()),
            ));
        }
        let (h1, w1) = hw(g, features[0]);
        let mut ups = Vec::with_capacity(features.len());
        for (l, (&f, lin)) in features.iter().zip(&self.proj).enumerate() {
            let s = g.shape(f).to_vec();
            let factor = 1usize << l;
            if s.len() != 3 || s[0] != lin.in_f {
                return Err(Error::dim(
                    format!("stage{}.channels", l + 1),
                    format!("expected {} x H x W, got {s:?}", lin.in_f),
                ));
            }
            if s[1] * factor != h1 || s[2] * factor != w1 {
                return Err(Error::dim(
                    format!("stage{}.spatial", l + 1),
                    format!("{}x{} is not stage-1 size {h1}x{w1} / {factor}", s[1], s[2]),
                ));
            }
            let t = to_tokens(g, f)?;
            let t = lin.forward(g, b, t)?;
            let m = from_tokens(g, t, s[1], s[2])?;
            ups.push(if factor == 1 { m } else { g.bilinear_upsample(m, factor)? });
        }
        let cat = g.concat(&ups)?;
        let t = to_tokens(g, cat)?;
        let t = self.fuse.forward(g, b, t)?;
        let t = g.gelu(t);
        let t = self.classify.forward(g, b, t)?;
        let logits = from_tokens(g, t, h1, w1)?;
        g.bilinear_upsample(logits, 4)
    }

    pub fn macs(&self, h1: usize, w1: usize) -> u64 {
        let n1 = h1 * w1;
        let proj: u64 = self
            .proj
            .iter()
            .enumerate()
            .map(|(l, p)| p.macs(n1 >> (2 * l)))
            .sum();
        proj + self.fuse.macs(n1) + self.classify.macs(n1)
    }
}
