//! Parallel Pooling Mixer block.
//!
//! ```text
//! f̂  = DWConv7x7(norm(f))
//! f̂  = Σ_k AvgPool_k(f̂) + f̂          (all pools read the same f̂)
//! w  = sigmoid(Conv1x1(f̂))
//! fʷ = w·f + f
//! out = FFN(norm(fʷ)) + SE(fʷ)
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::layers::{from_tokens, hw, to_tokens, Conv, Linear, Norm};
use crate::nn::params::{Bound, ParamBuilder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpxConfig {
    /// Odd pooling sizes applied in parallel.
    pub pools: Vec<usize>,
    pub ffn_ratio: usize,
    pub se_reduction: usize,
}

impl Default for PpxConfig {
    fn default() -> Self {
        Self {
            pools: vec![3, 7, 11],
            ffn_ratio: 4,
            se_reduction: 4,
        }
    }
}

impl PpxConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.pools.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::Config(format!("pooling size {k} is even")));
        }
        if self.ffn_ratio == 0 || self.se_reduction == 0 {
            return Err(Error::Config("ffn_ratio and se_reduction must be positive".into()));
        }
        Ok(())
    }
}

/// Squeeze-and-excitation gate: pool, squeeze, ReLU, excite, sigmoid.
#[derive(Debug, Clone, Copy)]
pub struct SqueezeExcite {
    pub squeeze: Linear,
    pub excite: Linear,
}

impl SqueezeExcite {
    pub fn declare(pb: &mut ParamBuilder, name: &str, c: usize, reduction: usize) -> Self {
        let hidden = (c / reduction).max(1);
        Self {
            squeeze: Linear::declare(pb, &format!("{name}.squeeze"), c, hidden),
            excite: Linear::declare(pb, &format!("{name}.excite"), hidden, c),
        }
    }

    /// Channel gate in (0, 1) for a `C x H x W` input.
    pub fn gate(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let pooled = g.global_avg_pool(x)?;
        let s = self.squeeze.forward(g, b, pooled)?;
        let s = g.relu(s);
        let e = self.excite.forward(g, b, s)?;
        Ok(g.sigmoid(e))
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let gate = self.gate(g, b, x)?;
        g.scale_channels(x, gate)
    }
}

#[derive(Debug, Clone)]
pub struct PpxBlock {
    pub channels: usize,
    pub pools: Vec<usize>,
    pub norm1: Norm,
    pub dw: Conv,
    pub mix: Conv,
    pub norm2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub se: SqueezeExcite,
}

/// Intermediate values of one PPX pass.
#[derive(Debug, Clone, Copy)]
pub struct PpxTrace {
    pub attention: Var,
    pub weighted: Var,
    pub se_gate: Var,
    pub output: Var,
}

impl PpxBlock {
    pub fn declare(pb: &mut ParamBuilder, name: &str, channels: usize, cfg: &PpxConfig) -> Result<Self> {
        cfg.validate()?;
        let hidden = channels * cfg.ffn_ratio;
        Ok(Self {
            channels,
            pools: cfg.pools.clone(),
            norm1: Norm::declare(pb, &format!("{name}.norm1"), channels),
            dw: Conv::depthwise(pb, &format!("{name}.dw"), channels, 7),
            mix: Conv::declare(pb, &format!("{name}.mix"), channels, channels, 1, 1, 0, 1),
            norm2: Norm::declare(pb, &format!("{name}.norm2"), channels),
            fc1: Linear::declare(pb, &format!("{name}.ffn.fc1"), channels, hidden),
            fc2: Linear::declare(pb, &format!("{name}.ffn.fc2"), hidden, channels),
            se: SqueezeExcite::declare(pb, &format!("{name}.se"), channels, cfg.se_reduction),
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, f_q: Var) -> Result<Var> {
        Ok(self.forward_traced(g, b, f_q)?.output)
    }

    pub fn forward_traced(&self, g: &mut Graph, b: &Bound, f_q: Var) -> Result<PpxTrace> {
        let (h, w) = hw(g, f_q);
        let n = self.norm1.forward_map(g, b, f_q)?;
        let fhat = self.dw.forward(g, b, n)?;
        let mut acc = fhat;
        for &k in &self.pools {
            let pooled = g.avg_pool_same(fhat, k)?;
            acc = g.add(acc, pooled)?;
        }
        let logits = self.mix.forward(g, b, acc)?;
        let attention = g.sigmoid(logits);
        let gated = g.mul(attention, f_q)?;
        let weighted = g.add(gated, f_q)?;

        let t = to_tokens(g, weighted)?;
        let t = self.norm2.forward(g, b, t)?;
        let t = self.fc1.forward(g, b, t)?;
        let t = g.gelu(t);
        let t = self.fc2.forward(g, b, t)?;
        let ffn = from_tokens(g, t, h, w)?;

        let se_gate = self.se.gate(g, b, weighted)?;
        let se = g.scale_channels(weighted, se_gate)?;
        let output = g.add(ffn, se)?;
        Ok(PpxTrace {
            attention,
            weighted,
            se_gate,
            output,
        })
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let n = h * w;
        let c = self.channels;
        self.dw.macs(h, w)
            + self.mix.macs(h, w)
            + self.fc1.macs(n)
            + self.fc2.macs(n)
            + self.se.squeeze.macs(1)
            + self.se.excite.macs(1)
            + (self.pools.iter().map(|k| k * k).sum::<usize>() * c * n) as u64
            + (3 * c * n) as u64
    }
}
