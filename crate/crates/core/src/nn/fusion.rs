//! Gated cross-modal rectification followed by token-mixing fusion.
//!
//! Rectification computes channel gates from the pooled concatenation and
//! spatial gates from a 3x3 conv over it, then adds the gated partner feature
//! scaled by a learnable `lambda`:
//!
//! ```text
//! rgb' = rgb + λ · g_c[x] · g_s[x] · x
//! x'   = x   + λ · g_c[rgb] · g_s[rgb] · rgb
//! fused = W_out · (z + MLP(norm(z))),   z = concat(rgb', x')
//! ```
//! With both gates closed the rectification is the identity.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::layers::{from_tokens, hw, to_tokens, Conv, Linear, Norm};
use crate::nn::params::{Bound, Init, ParamBuilder, ParamId};

#[derive(Debug, Clone)]
pub struct FusionPair {
    pub channels: usize,
    pub channel_fc1: Linear,
    pub channel_fc2: Linear,
    pub spatial: Conv,
    pub lambda: ParamId,
    pub mix_norm: Norm,
    pub mix_fc1: Linear,
    pub mix_fc2: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionOutput {
    pub rectified_rgb: Var,
    pub rectified_x: Var,
    pub fused: Var,
}

pub const LAMBDA_INIT: f64 = 0.5;

impl FusionPair {
    pub fn declare(pb: &mut ParamBuilder, name: &str, channels: usize) -> Self {
        let c2 = 2 * channels;
        Self {
            channels,
            channel_fc1: Linear::declare(pb, &format!("{name}.frm.channel_fc1"), c2, c2),
            channel_fc2: Linear::declare(pb, &format!("{name}.frm.channel_fc2"), c2, c2),
            spatial: Conv::declare(pb, &format!("{name}.frm.spatial"), c2, 2, 3, 1, 1, 1),
            lambda: pb.declare(format!("{name}.frm.lambda"), &[1], Init::Constant(LAMBDA_INIT)),
            mix_norm: Norm::declare(pb, &format!("{name}.ffm.norm"), c2),
            mix_fc1: Linear::declare(pb, &format!("{name}.ffm.fc1"), c2, c2),
            mix_fc2: Linear::declare(pb, &format!("{name}.ffm.fc2"), c2, c2),
            out: Linear::declare(pb, &format!("{name}.ffm.out"), c2, channels),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, f_rgb: Var, f_x: Var) -> Result<FusionOutput> {
        let s = g.shape(f_rgb).to_vec();
        if g.shape(f_x) != s.as_slice() {
            return Err(Error::dim("fusion", format!("input shapes differ: {s:?} vs {:?}", g.shape(f_x))));
        }
        if s.len() != 3 || s[0] != self.channels {
            return Err(Error::dim("channels", format!("fusion expects {} x H x W, got {s:?}", self.channels)));
        }
        let c = self.channels;
        let (h, w) = hw(g, f_rgb);
        let cat = g.concat(&[f_rgb, f_x])?;

        let pooled = g.global_avg_pool(cat)?;
        let hdn = self.channel_fc1.forward(g, b, pooled)?;
        let hdn = g.relu(hdn);
        let cg = self.channel_fc2.forward(g, b, hdn)?;
        let cg = g.sigmoid(cg);
        let cg_rgb = g.narrow(cg, 0, c)?;
        let cg_x = g.narrow(cg, c, c)?;

        let sg = self.spatial.forward(g, b, cat)?;
        let sg = g.sigmoid(sg);
        let sg_rgb = g.narrow(sg, 0, 1)?;
        let sg_x = g.narrow(sg, 1, 1)?;

        let lambda = b[self.lambda];
        let from_x = g.scale_channels(f_x, cg_x)?;
        let from_x = g.scale_pixels(from_x, sg_x)?;
        let from_x = g.scale_by(from_x, lambda)?;
        let rectified_rgb = g.add(f_rgb, from_x)?;

        let from_rgb = g.scale_channels(f_rgb, cg_rgb)?;
        let from_rgb = g.scale_pixels(from_rgb, sg_rgb)?;
        let from_rgb = g.scale_by(from_rgb, lambda)?;
        let rectified_x = g.add(f_x, from_rgb)?;

        let z = g.concat(&[rectified_rgb, rectified_x])?;
        let zt = to_tokens(g, z)?;
        let m = self.mix_norm.forward(g, b, zt)?;
        let m = self.mix_fc1.forward(g, b, m)?;
        let m = g.gelu(m);
        let m = self.mix_fc2.forward(g, b, m)?;
        let m = g.add(zt, m)?;
        let fused = self.out.forward(g, b, m)?;
        let fused = from_tokens(g, fused, h, w)?;
        Ok(FusionOutput {
            rectified_rgb,
            rectified_x,
            fused,
        })
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let n = h * w;
        let c2 = 2 * self.channels;
        self.channel_fc1.macs(1)
            + self.channel_fc2.macs(1)
            + self.spatial.macs(h, w)
            + (4 * self.channels * n) as u64
            + self.mix_fc1.macs(n)
            + self.mix_fc2.macs(n)
            + self.out.macs(n)
            + (c2 * n) as u64
    }
}
