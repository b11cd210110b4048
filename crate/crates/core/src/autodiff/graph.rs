use crate::autodiff::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy { x: Var, s: Var },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    AvgPool { x: Var, k: usize },
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    GlobalAvgPool(Var),
    Resize { x: Var, h: usize, w: usize },
    Concat(Vec<Var>),
    Narrow { x: Var, start: usize },
    ScaleChannels { x: Var, g: Var },
    ScalePixels { x: Var, m: Var },
    PixelSelect { cands: Vec<Var>, winner: Vec<usize> },
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, labels: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Tape of primitive operations recorded in execution order.
///
/// Leaves created with `requires_grad` receive gradients from [`Graph::backward`];
/// repeated backward calls accumulate into those buffers until [`Graph::zero_grad`].
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(axis: &str, detail: String) -> Error {
    Error::dim(axis, detail)
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a leaf; it is differentiable when `t.requires_grad()` is set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(shape.to_vec(), t.into_data(), Op::Leaf, false))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph values are well formed")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                what,
                format!("operand shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(&[x]);
        self.push(shape, value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map_unary(x, |v| v * c, Op::Scale(x, c))
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scale", format!("expected one element, got {:?}", self.shape(s))));
        }
        let c = self.value(s)[0];
        let value = self.value(x).iter().map(|v| v * c).collect();
        let ng = self.ng(&[x, s]);
        Ok(self.push(self.shape(x).to_vec(), value, Op::ScaleBy { x, s }, ng))
    }

    fn chw(&self, v: Var, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape(v) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(shape_err(what, format!("expected a CxHxW tensor, got {s:?}"))),
        }
    }

    /// Cross-correlation of a `C x H x W` input with an `O x C/groups x k x k` kernel.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let (c, h, wd) = self.chw(x, "input")?;
        let ws = self.shape(w).to_vec();
        let [o, cg, k, k2] = ws[..] else {
            return Err(shape_err("weight", format!("expected O x C/g x k x k, got {ws:?}")));
        };
        if stride == 0 || groups == 0 {
            return Err(Error::Config("stride and groups must be positive".into()));
        }
        if k != k2 {
            return Err(shape_err("kernel", format!("kernel must be square, got {k}x{k2}")));
        }
        if c % groups != 0 {
            return Err(shape_err("channels", format!("{c} input channels not divisible by {groups} groups")));
        }
        if o % groups != 0 {
            return Err(shape_err("out_channels", format!("{o} output channels not divisible by {groups} groups")));
        }
        if cg != c / groups {
            return Err(shape_err(
                "channels",
                format!("weight expects {cg} channels per group, input provides {}", c / groups),
            ));
        }
        if h + 2 * padding < k {
            return Err(shape_err("height", format!("kernel {k} exceeds padded height {}", h + 2 * padding)));
        }
        if wd + 2 * padding < k {
            return Err(shape_err("width", format!("kernel {k} exceeds padded width {}", wd + 2 * padding)));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(shape_err("bias", format!("expected [{o}], got {:?}", self.shape(b))));
            }
        }
        let geom = ConvGeom {
            in_c: c,
            in_h: h,
            in_w: wd,
            out_c: o,
            k,
            stride,
            pad: padding,
            groups,
        };
        let value = kernels::conv2d_forward(&geom, self.value(x), self.value(w), b.map(|b| self.value(b)));
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        Ok(self.push(vec![o, geom.out_h(), geom.out_w()], value, Op::Conv2d { x, w, b, geom }, ng))
    }

    /// Shape-preserving average pool (stride 1, zero padding, divisor `k*k`).
    pub fn avg_pool_same(&mut self, x: Var, k: usize) -> Result<Var> {
        if k % 2 == 0 {
            return Err(Error::Config(format!("pooling size must be odd, got {k}")));
        }
        let (c, h, w) = self.chw(x, "input")?;
        let value = kernels::box_pool_same(self.value(x), c, h, w, k);
        let ng = self.ng(&[x]);
        Ok(self.push(vec![c, h, w], value, Op::AvgPool { x, k }, ng))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map_unary(x, gelu, Op::Gelu(x))
    }

    /// Affine map over the last axis: `x[..., C] @ w[C, O] + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let [cin, o] = ws[..] else {
            return Err(shape_err("weight", format!("expected C x O, got {ws:?}")));
        };
        let c = *xs.last().ok_or_else(|| shape_err("input", "rank-0 input".into()))?;
        if c != cin {
            return Err(shape_err("last", format!("input has {c} features, weight expects {cin}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(shape_err("bias", format!("expected [{o}], got {:?}", self.shape(b))));
            }
        }
        let rows = self.value(x).len() / c;
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; rows * o];
        for r in 0..rows {
            let orow = &mut out[r * o..(r + 1) * o];
            if let Some(b) = b {
                orow.copy_from_slice(self.value(b));
            }
            for (ci, &xv) in xv[r * c..(r + 1) * c].iter().enumerate() {
                let wrow = &wv[ci * o..(ci + 1) * o];
                for (ov, wv) in orow.iter_mut().zip(wrow) {
                    *ov += xv * wv;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = o;
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        Ok(self.push(shape, out, Op::Linear { x, w, b }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (&[n, k], &[k2, m]) = (self.shape(a), self.shape(b)) else {
            return Err(shape_err("matmul", "operands must be rank 2".into()));
        };
        if k != k2 {
            return Err(shape_err("inner", format!("{n}x{k} @ {k2}x{m}")));
        }
        let out = matmul_raw(self.value(a), self.value(b), n, k, m);
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![n, m], out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let &[r, c] = self.shape(x) else {
            return Err(shape_err("transpose", format!("expected rank 2, got {:?}", self.shape(x))));
        };
        let out = transpose_raw(self.value(x), r, c);
        let ng = self.ng(&[x]);
        Ok(self.push(vec![c, r], out, Op::Transpose(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            return Err(shape_err("reshape", format!("cannot view {:?} as {shape:?}", self.shape(x))));
        }
        let value = self.value(x).to_vec();
        let ng = self.ng(&[x]);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), ng))
    }

    fn last_dim(&self, x: Var, what: &str) -> Result<usize> {
        match self.shape(x).last() {
            Some(&d) if d > 0 => Ok(d),
            _ => Err(shape_err(what, "degenerate last axis".into())),
        }
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let d = self.last_dim(x, "softmax")?;
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(d) {
            softmax_in_place(row);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Softmax(x), ng))
    }

    /// Normalises each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.last_dim(x, "layer_norm")?;
        for (p, name) in [(gamma, "gamma"), (beta, "beta")] {
            if self.shape(p) != [d] {
                return Err(shape_err(name, format!("expected [{d}], got {:?}", self.shape(p))));
            }
        }
        let xv = self.value(x);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * gv[i % d] + bv[i % d])
            .collect();
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, ng))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "input")?;
        let n = (h * w) as f64;
        let out = self.value(x).chunks_exact(h * w).map(|p| p.iter().sum::<f64>() / n).collect();
        let ng = self.ng(&[x]);
        Ok(self.push(vec![c], out, Op::GlobalAvgPool(x), ng))
    }

    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Config("upsample factor must be positive".into()));
        }
        let (_, h, w) = self.chw(x, "input")?;
        self.resize_bilinear(x, h * factor, w * factor)
    }

    /// Half-pixel-centred bilinear resize to `oh x ow`.
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x, "input")?;
        if oh == 0 || ow == 0 {
            return Err(shape_err("size", "target extent must be positive".into()));
        }
        if (oh, ow) == (h, w) {
            return self.reshape(x, &[c, h, w]);
        }
        let out = kernels::bilinear_resize(self.value(x), c, h, w, oh, ow);
        let ng = self.ng(&[x]);
        Ok(self.push(vec![c, oh, ow], out, Op::Resize { x, h: oh, w: ow }, ng))
    }

    /// Concatenates along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(shape_err("1", format!("cannot concat {s:?} with trailing {tail:?}")));
            }
            lead += s[0];
            out.extend_from_slice(self.value(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let ng = self.ng(parts);
        Ok(self.push(shape, out, Op::Concat(parts.to_vec()), ng))
    }

    /// Slice `[start, start+len)` of the leading axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || len == 0 || start + len > s[0] {
            return Err(shape_err("0", format!("narrow [{start}, {}) out of {s:?}", start + len)));
        }
        let inner: usize = s[1..].iter().product();
        let value = self.value(x)[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        let ng = self.ng(&[x]);
        Ok(self.push(shape, value, Op::Narrow { x, start }, ng))
    }

    /// `x[c, p] * g[c]` for a `C x H x W` input and a `C` gate vector.
    pub fn scale_channels(&mut self, x: Var, g: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "input")?;
        if self.shape(g) != [c] {
            return Err(shape_err("channels", format!("gate {:?} vs {c} channels", self.shape(g))));
        }
        let gv = self.value(g);
        let out = self
            .value(x)
            .chunks_exact(h * w)
            .zip(gv)
            .flat_map(|(p, &s)| p.iter().map(move |v| v * s))
            .collect();
        let ng = self.ng(&[x, g]);
        Ok(self.push(vec![c, h, w], out, Op::ScaleChannels { x, g }, ng))
    }

    /// `x[c, p] * m[p]` for a `C x H x W` input and a `1 x H x W` map.
    pub fn scale_pixels(&mut self, x: Var, m: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "input")?;
        if self.value(m).len() != h * w {
            return Err(shape_err("spatial", format!("map {:?} vs {h}x{w}", self.shape(m))));
        }
        let mv = self.value(m);
        let out = self
            .value(x)
            .chunks_exact(h * w)
            .flat_map(|p| p.iter().zip(mv).map(|(v, s)| v * s))
            .collect();
        let ng = self.ng(&[x, m]);
        Ok(self.push(vec![c, h, w], out, Op::ScalePixels { x, m }, ng))
    }

    /// Per-pixel hard selection: output pixel `p` copies every channel of `cands[winner[p]]`.
    pub fn pixel_select(&mut self, cands: &[Var], winner: Vec<usize>) -> Result<Var> {
        let first = *cands.first().ok_or_else(|| Error::Usage("selection over zero candidates".into()))?;
        let (c, h, w) = self.chw(first, "candidate")?;
        for &v in cands {
            self.same_shape(first, v, "candidate")?;
        }
        if winner.len() != h * w || winner.iter().any(|&i| i >= cands.len()) {
            return Err(shape_err("winner", "selection map does not match candidates".into()));
        }
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for (p, &m) in winner.iter().enumerate() {
                out[ch * h * w + p] = self.value(cands[m])[ch * h * w + p];
            }
        }
        let ng = self.ng(cands);
        Ok(self.push(vec![c, h, w], out, Op::PixelSelect { cands: cands.to_vec(), winner }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(&[x]);
        self.push(vec![1], vec![s], Op::Mean(x), ng)
    }

    /// Mean pixel-wise cross entropy of `K x H x W` logits against labels; `None` pixels are ignored.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[Option<usize>]) -> Result<Var> {
        let (k, h, w) = self.chw(logits, "logits")?;
        if labels.len() != h * w {
            return Err(shape_err("labels", format!("{} labels for {h}x{w} logits", labels.len())));
        }
        let lv = self.value(logits);
        let hw = h * w;
        let mut probs = vec![0.0; k * hw];
        let mut loss = 0.0;
        let mut count = 0;
        let mut col = vec![0.0; k];
        for p in 0..hw {
            for c in 0..k {
                col[c] = lv[c * hw + p];
            }
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = col.iter().map(|v| (v - max).exp()).sum();
            let logz = max + z.ln();
            for c in 0..k {
                probs[c * hw + p] = (col[c] - logz).exp();
            }
            if let Some(y) = labels[p] {
                if y >= k {
                    return Err(Error::Data(format!(
                        "label {y} at pixel (row {}, col {}) is outside [0, {k})",
                        p / w,
                        p % w
                    )));
                }
                loss += logz - col[y];
                count += 1;
            }
        }
        let value = if count > 0 { loss / count as f64 } else { 0.0 };
        let ng = self.ng(&[logits]);
        Ok(self.push(
            vec![1],
            vec![value],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                count,
            },
            ng,
        ))
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, v)| *b += v),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    axpy(gb, 1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    axpy(gb, -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((o, gv), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for ((o, gv), x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    axpy(gx, *c, g);
                }
            }
            Op::ScaleBy { x, s } => {
                let c = nodes[s.0].value[0];
                let dot: f64 = g.iter().zip(&nodes[x.0].value).map(|(a, b)| a * b).sum();
                if let Some(gx) = slot(nodes, grads, *x) {
                    axpy(gx, c, g);
                }
                if let Some(gs) = slot(nodes, grads, *s) {
                    gs[0] += dot;
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                if let Some(b) = b {
                    if let Some(gb) = slot(nodes, grads, *b) {
                        let plane = geom.out_h() * geom.out_w();
                        for (o, gb) in gb.iter_mut().enumerate() {
                            *gb += g[o * plane..(o + 1) * plane].iter().sum::<f64>();
                        }
                    }
                }
                // x and w may alias (never in practice); take buffers one at a time.
                let mut gw_buf = slot(nodes, grads, *w).map(|s| s.to_vec());
                if let Some(gx) = slot(nodes, grads, *x) {
                    kernels::conv2d_backward(geom, xv, wv, g, Some(gx), gw_buf.as_deref_mut(), None);
                } else if gw_buf.is_some() {
                    kernels::conv2d_backward(geom, xv, wv, g, None, gw_buf.as_deref_mut(), None);
                }
                if let (Some(buf), Some(gw)) = (gw_buf, slot(nodes, grads, *w)) {
                    gw.copy_from_slice(&buf);
                }
            }
            Op::AvgPool { x, k } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let s = &nodes[x.0].shape;
                    let back = kernels::box_pool_same(g, s[0], s[1], s[2], *k);
                    axpy(gx, 1.0, &back);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((o, gv), y) in gx.iter_mut().zip(g).zip(&node.value) {
                        *o += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = &nodes[x.0].value;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((o, gv), v) in gx.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = &nodes[x.0].value;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((o, gv), v) in gx.iter_mut().zip(g).zip(xv) {
                        *o += gv * gelu_grad(*v);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let ws = &nodes[w.0].shape;
                let (c, o) = (ws[0], ws[1]);
                let rows = xv.len() / c;
                if let Some(b) = b {
                    if let Some(gb) = slot(nodes, grads, *b) {
                        for r in 0..rows {
                            axpy(gb, 1.0, &g[r * o..(r + 1) * o]);
                        }
                    }
                }
                if let Some(gw) = slot(nodes, grads, *w) {
                    for r in 0..rows {
                        let grow = &g[r * o..(r + 1) * o];
                        for ci in 0..c {
                            axpy(&mut gw[ci * o..(ci + 1) * o], xv[r * c + ci], grow);
                        }
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    for r in 0..rows {
                        let grow = &g[r * o..(r + 1) * o];
                        for ci in 0..c {
                            gx[r * c + ci] += dot(grow, &wv[ci * o..(ci + 1) * o]);
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let m = nodes[b.0].shape[1];
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, grads, *a) {
                    // dA = G B^T
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for kk in 0..k {
                            ga[r * k + kk] += dot(grow, &bv[kk * m..(kk + 1) * m]);
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    // dB = A^T G
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for kk in 0..k {
                            axpy(&mut gb[kk * m..(kk + 1) * m], av[r * k + kk], grow);
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let (r, c) = (node.shape[0], node.shape[1]);
                    let back = transpose_raw(g, r, c);
                    axpy(gx, 1.0, &back);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    axpy(gx, 1.0, g);
                }
            }
            Op::Softmax(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let d = *node.shape.last().unwrap();
                    for ((gxr, gr), yr) in gx.chunks_exact_mut(d).zip(g.chunks_exact(d)).zip(node.value.chunks_exact(d)) {
                        let s = dot(gr, yr);
                        for ((o, gv), y) in gxr.iter_mut().zip(gr).zip(yr) {
                            *o += y * (gv - s);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = *node.shape.last().unwrap();
                let gv = &nodes[gamma.0].value;
                if let Some(gg) = slot(nodes, grads, *gamma) {
                    for (i, (gi, h)) in g.iter().zip(xhat).enumerate() {
                        gg[i % d] += gi * h;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *beta) {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % d] += gi;
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    let mut dh = vec![0.0; d];
                    for (r, rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dh[j] = gr[j] * gv[j];
                        }
                        let m1 = dh.iter().sum::<f64>() / d as f64;
                        let m2 = dot(&dh, hr) / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += rs * (dh[j] - m1 - hr[j] * m2);
                        }
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let s = &nodes[x.0].shape;
                    let hw = s[1] * s[2];
                    for (c, p) in gx.chunks_exact_mut(hw).enumerate() {
                        let v = g[c] / hw as f64;
                        p.iter_mut().for_each(|o| *o += v);
                    }
                }
            }
            Op::Resize { x, h, w } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let s = &nodes[x.0].shape;
                    kernels::bilinear_resize_backward(g, s[0], s[1], s[2], *h, *w, gx);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    if let Some(gp) = slot(nodes, grads, *p) {
                        axpy(gp, 1.0, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Narrow { x, start } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let inner: usize = node.shape[1..].iter().product();
                    axpy(&mut gx[start * inner..start * inner + g.len()], 1.0, g);
                }
            }
            Op::ScaleChannels { x, g: gate } => {
                let hw = node.shape[1] * node.shape[2];
                let (xv, sv) = (&nodes[x.0].value, &nodes[gate.0].value);
                if let Some(gs) = slot(nodes, grads, *gate) {
                    for (c, o) in gs.iter_mut().enumerate() {
                        *o += dot(&g[c * hw..(c + 1) * hw], &xv[c * hw..(c + 1) * hw]);
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (c, s) in sv.iter().enumerate() {
                        axpy(&mut gx[c * hw..(c + 1) * hw], *s, &g[c * hw..(c + 1) * hw]);
                    }
                }
            }
            Op::ScalePixels { x, m } => {
                let hw = node.shape[1] * node.shape[2];
                let (xv, mv) = (&nodes[x.0].value, &nodes[m.0].value);
                if let Some(gm) = slot(nodes, grads, *m) {
                    for (gc, xc) in g.chunks_exact(hw).zip(xv.chunks_exact(hw)) {
                        for ((o, gv), xv) in gm.iter_mut().zip(gc).zip(xc) {
                            *o += gv * xv;
                        }
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (gxc, gc) in gx.chunks_exact_mut(hw).zip(g.chunks_exact(hw)) {
                        for ((o, gv), s) in gxc.iter_mut().zip(gc).zip(mv) {
                            *o += gv * s;
                        }
                    }
                }
            }
            Op::PixelSelect { cands, winner } => {
                let hw = winner.len();
                let c = node.shape[0];
                for (m, v) in cands.iter().enumerate() {
                    if let Some(gv) = slot(nodes, grads, *v) {
                        for (p, _) in winner.iter().enumerate().filter(|(_, &w)| w == m) {
                            for ch in 0..c {
                                gv[ch * hw + p] += g[ch * hw + p];
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    let v = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|o| *o += v);
                }
            }
            Op::CrossEntropy { logits, labels, probs, count } => {
                if *count == 0 {
                    return;
                }
                if let Some(gl) = slot(nodes, grads, *logits) {
                    let hw = labels.len();
                    let scale = g[0] / *count as f64;
                    for (p, y) in labels.iter().enumerate() {
                        let Some(y) = y else { continue };
                        for c in 0..gl.len() / hw {
                            let onehot = if c == *y { 1.0 } else { 0.0 };
                            gl[c * hw + p] += scale * (probs[c * hw + p] - onehot);
                        }
                    }
                }
            }
        }
    }
}

/// Gradient buffer for an input, or None when nothing upstream needs it.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        let orow = &mut out[r * m..(r + 1) * m];
        for kk in 0..k {
            axpy(orow, a[r * k + kk], &b[kk * m..(kk + 1) * m]);
        }
    }
    out
}

pub(crate) fn transpose_raw(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

// Largest double below one; keeps saturated outputs inside the open interval.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}
