use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::nn::params::{Bound, Init, ParamBuilder, ParamId};

/// Layer-norm epsilon used by every block.
pub const LN_EPS: f64 = 1e-6;

/// Standard deviation of the truncated-normal init for dense layers.
pub const DENSE_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn declare(
        pb: &mut ParamBuilder,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Self {
        let fan_out = k * k * out_c / groups;
        let weight = pb.declare(format!("{name}.weight"), &[out_c, in_c / groups, k, k], Init::FanOut(fan_out));
        let bias = pb.declare(format!("{name}.bias"), &[out_c], Init::Zeros);
        Self {
            weight,
            bias,
            in_c,
            out_c,
            k,
            stride,
            pad,
            groups,
        }
    }

    /// Depthwise `k x k` convolution with "same" padding.
    pub fn depthwise(pb: &mut ParamBuilder, name: &str, c: usize, k: usize) -> Self {
        Self::declare(pb, name, c, c, k, 1, k / 2, c)
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, b[self.weight], Some(b[self.bias]), self.stride, self.pad, self.groups)
    }

    pub fn param_count(&self) -> usize {
        self.out_c * (self.in_c / self.groups) * self.k * self.k + self.out_c
    }

    /// Multiply-accumulates for an `h x w` input.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let oh = (h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.k) / self.stride + 1;
        (oh * ow * self.out_c * (self.in_c / self.groups) * self.k * self.k) as u64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_f: usize,
    pub out_f: usize,
}

impl Linear {
    pub fn declare(pb: &mut ParamBuilder, name: &str, in_f: usize, out_f: usize) -> Self {
        Self::declare_with(pb, name, in_f, out_f, Init::Zeros)
    }

    pub fn declare_with(pb: &mut ParamBuilder, name: &str, in_f: usize, out_f: usize, bias_init: Init) -> Self {
        let weight = pb.declare(format!("{name}.weight"), &[in_f, out_f], Init::TruncNormal(DENSE_STD));
        let bias = pb.declare(format!("{name}.bias"), &[out_f], bias_init);
        Self {
            weight,
            bias,
            in_f,
            out_f,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        g.linear(x, b[self.weight], Some(b[self.bias]))
    }

    pub fn macs(&self, rows: usize) -> u64 {
        (rows * self.in_f * self.out_f) as u64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl Norm {
    pub fn declare(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        Self {
            gamma: pb.declare(format!("{name}.weight"), &[dim], Init::Ones),
            beta: pb.declare(format!("{name}.bias"), &[dim], Init::Zeros),
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, b[self.gamma], b[self.beta], LN_EPS)
    }

    /// Channel-wise norm of a `C x H x W` map (per pixel over channels).
    pub fn forward_map(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let (h, w) = hw(g, x);
        let t = to_tokens(g, x)?;
        let t = self.forward(g, b, t)?;
        from_tokens(g, t, h, w)
    }
}

pub fn hw(g: &Graph, x: Var) -> (usize, usize) {
    let s = g.shape(x);
    (s[1], s[2])
}

/// `C x H x W` to `(H*W) x C`.
pub fn to_tokens(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0], s[1] * s[2]])?;
    g.transpose(flat)
}

/// `(H*W) x C` to `C x H x W`.
pub fn from_tokens(g: &mut Graph, t: Var, h: usize, w: usize) -> Result<Var> {
    let c = g.shape(t)[1];
    let tt = g.transpose(t)?;
    g.reshape(tt, &[c, h, w])
}

/// Applies a token-wise linear layer to a `C x H x W` map.
pub fn linear_map(g: &mut Graph, b: &Bound, lin: &Linear, x: Var) -> Result<Var> {
    let (h, w) = hw(g, x);
    let t = to_tokens(g, x)?;
    let t = lin.forward(g, b, t)?;
    from_tokens(g, t, h, w)
}
