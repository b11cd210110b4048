//! Efficient multi-head self-attention block with spatially reduced keys and
//! values, followed by a Mix-FFN (linear, 3x3 depthwise conv, GELU, linear).
//! Both sub-layers use pre-norm residual wiring.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::layers::{from_tokens, hw, to_tokens, Conv, Linear, Norm};
use crate::nn::params::{Bound, ParamBuilder};

#[derive(Debug, Clone)]
pub struct MhsaBlock {
    pub channels: usize,
    pub heads: usize,
    pub sr_ratio: usize,
    pub norm1: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub sr: Option<(Conv, Norm)>,
    pub proj: Linear,
    pub norm2: Norm,
    pub fc1: Linear,
    pub dw: Conv,
    pub fc2: Linear,
}

/// Output of the attention sub-layer with the per-head attention matrices.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub output: Var,
    /// `N x N_kv` row-stochastic matrices, one per head.
    pub weights: Vec<Var>,
}

impl MhsaBlock {
    pub fn declare(
        pb: &mut ParamBuilder,
        name: &str,
        channels: usize,
        heads: usize,
        sr_ratio: usize,
        mlp_ratio: usize,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!("{channels} channels not divisible by {heads} heads")));
        }
        if sr_ratio == 0 {
            return Err(Error::Config("spatial-reduction ratio must be positive".into()));
        }
        let hidden = channels * mlp_ratio;
        let sr = (sr_ratio > 1).then(|| {
            (
                Conv::declare(pb, &format!("{name}.attn.sr"), channels, channels, sr_ratio, sr_ratio, 0, 1),
                Norm::declare(pb, &format!("{name}.attn.sr_norm"), channels),
            )
        });
        Ok(Self {
            channels,
            heads,
            sr_ratio,
            norm1: Norm::declare(pb, &format!("{name}.norm1"), channels),
            q: Linear::declare(pb, &format!("{name}.attn.q"), channels, channels),
            k: Linear::declare(pb, &format!("{name}.attn.k"), channels, channels),
            v: Linear::declare(pb, &format!("{name}.attn.v"), channels, channels),
            sr,
            proj: Linear::declare(pb, &format!("{name}.attn.proj"), channels, channels),
            norm2: Norm::declare(pb, &format!("{name}.norm2"), channels),
            fc1: Linear::declare(pb, &format!("{name}.mlp.fc1"), channels, hidden),
            dw: Conv::depthwise(pb, &format!("{name}.mlp.dw"), hidden, 3),
            fc2: Linear::declare(pb, &format!("{name}.mlp.fc2"), hidden, channels),
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        Ok(self.forward_traced(g, b, x)?.0)
    }

    /// Block output together with the attention trace of the first sub-layer.
    pub fn forward_traced(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<(Var, AttentionTrace)> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[0] != self.channels {
            return Err(Error::dim("channels", format!("block expects {} x H x W, got {s:?}", self.channels)));
        }
        let (h, w) = hw(g, x);
        let t = to_tokens(g, x)?;
        let n1 = self.norm1.forward(g, b, t)?;
        let trace = self.attention(g, b, n1, h, w)?;
        let t = g.add(t, trace.output)?;

        let n2 = self.norm2.forward(g, b, t)?;
        let m = self.fc1.forward(g, b, n2)?;
        let m = from_tokens(g, m, h, w)?;
        let m = self.dw.forward(g, b, m)?;
        let m = g.gelu(m);
        let m = to_tokens(g, m)?;
        let m = self.fc2.forward(g, b, m)?;
        let t = g.add(t, m)?;
        Ok((from_tokens(g, t, h, w)?, trace))
    }

    /// Scaled dot-product attention over normalised `N x C` tokens of an `h x w` map.
    pub fn attention(&self, g: &mut Graph, b: &Bound, tokens: Var, h: usize, w: usize) -> Result<AttentionTrace> {
        let d = self.channels / self.heads;
        let q = self.q.forward(g, b, tokens)?;
        let kv_src = match &self.sr {
            Some((conv, norm)) => {
                if h % self.sr_ratio != 0 || w % self.sr_ratio != 0 {
                    return Err(Error::dim(
                        "spatial",
                        format!("{h}x{w} map not divisible by reduction ratio {}", self.sr_ratio),
                    ));
                }
                let map = from_tokens(g, tokens, h, w)?;
                let red = conv.forward(g, b, map)?;
                let rt = to_tokens(g, red)?;
                norm.forward(g, b, rt)?
            }
            None => tokens,
        };
        let k = self.k.forward(g, b, kv_src)?;
        let v = self.v.forward(g, b, kv_src)?;
        let qt = g.transpose(q)?;
        let kt = g.transpose(k)?;
        let vt = g.transpose(v)?;
        let scale = 1.0 / (d as f64).sqrt();

        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for hd in 0..self.heads {
            let qh = g.narrow(qt, hd * d, d)?;
            let qh = g.transpose(qh)?;
            let kh = g.narrow(kt, hd * d, d)?;
            let vh = g.narrow(vt, hd * d, d)?;
            let vh = g.transpose(vh)?;
            let scores = g.matmul(qh, kh)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_lastdim(scores)?;
            let out = g.matmul(attn, vh)?;
            heads.push(g.transpose(out)?);
            weights.push(attn);
        }
        let merged = g.concat(&heads)?;
        let merged = g.transpose(merged)?;
        let output = self.proj.forward(g, b, merged)?;
        Ok(AttentionTrace { output, weights })
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let n = h * w;
        let c = self.channels;
        let nkv = n / (self.sr_ratio * self.sr_ratio);
        let sr = self.sr.as_ref().map_or(0, |(conv, _)| conv.macs(h, w));
        self.q.macs(n)
            + self.k.macs(nkv)
            + self.v.macs(nkv)
            + sr
            + (2 * n * nkv * c) as u64
            + self.proj.macs(n)
            + self.fc1.macs(n)
            + self.dw.macs(h, w)
            + self.fc2.macs(n)
    }
}
