//! Finite-difference gradient checks per block and brute-force oracle suites,
//! shipped in the library so the binary can run them without a test harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{count_params, quad_modalities, CmNext, ModelConfig};
use crate::nn::layers::LN_EPS;
use crate::nn::{
    grad_check_params, Bound, FusionPair, Init, MhsaBlock, MlpDecoder, ParamBuilder, ParamId, PpxBlock, PpxConfig,
    SelfQueryHub,
};
use crate::sensors::{depth_to_frame, events_to_frame, CameraIntrinsics, Event, EventStream};
use crate::tensor::Tensor;
use crate::train::ConfusionMatrix;

pub const GRAD_BLOCKS: [&str; 6] = ["hub", "ppx", "mhsa", "fusion", "decoder", "model"];
const FD_EPS: f64 = 1e-6;

/// Pass threshold on the maximum relative error of a block.
pub fn grad_tolerance(block: &str) -> f64 {
    if block == "model" {
        1e-3
    } else {
        1e-4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            cases,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(rng, n)).expect("shape matches")
}

/// `sum(y ⊙ R)` for a fixed random `R`, so every output coordinate matters.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = g.constant(&shape, uniform(&mut rng, shape.iter().product()))?;
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn inputs(pb: &mut ParamBuilder, shapes: &[Vec<usize>]) -> Vec<ParamId> {
    shapes
        .iter()
        .enumerate()
        .map(|(i, s)| pb.declare(format!("input{i}"), s, Init::TruncNormal(1.0)))
        .collect()
}

/// Maximum relative error between analytic and central-difference gradients
/// of one block, over its parameters and its inputs.
pub fn gradcheck_block(block: &str, seed: u64) -> Result<f64> {
    let mut pb = ParamBuilder::new();
    match block {
        "hub" => {
            let hub = SelfQueryHub::declare(&mut pb, "hub", 3, 3);
            let xs = inputs(&mut pb, &vec![vec![3, 4, 4]; 3]);
            let mut store = pb.build(seed);
            grad_check_params(
                &mut store,
                |g, b| {
                    let f: Vec<Var> = xs.iter().map(|&x| b[x]).collect();
                    let y = hub.forward(g, b, &f)?;
                    project(g, y, seed)
                },
                FD_EPS,
                None,
                seed,
            )
        }
        "ppx" => {
            let blk = PpxBlock::declare(&mut pb, "ppx", 4, &PpxConfig::default())?;
            let xs = inputs(&mut pb, &[vec![4, 6, 6]]);
            let mut store = pb.build(seed);
            grad_check_params(
                &mut store,
                |g, b| {
                    let y = blk.forward(g, b, b[xs[0]])?;
                    project(g, y, seed)
                },
                FD_EPS,
                None,
                seed,
            )
        }
        "mhsa" => {
            let blk = MhsaBlock::declare(&mut pb, "mhsa", 4, 2, 2, 2)?;
            let xs = inputs(&mut pb, &[vec![4, 4, 4]]);
            let mut store = pb.build(seed);
            grad_check_params(
                &mut store,
                |g, b| {
                    let y = blk.forward(g, b, b[xs[0]])?;
                    project(g, y, seed)
                },
                FD_EPS,
                None,
                seed,
            )
        }
        "fusion" => {
            let blk = FusionPair::declare(&mut pb, "fusion", 3);
            let xs = inputs(&mut pb, &[vec![3, 4, 4], vec![3, 4, 4]]);
            let mut store = pb.build(seed);
            grad_check_params(
                &mut store,
                |g, b| {
                    let out = blk.forward(g, b, b[xs[0]], b[xs[1]])?;
                    let a = project(g, out.fused, seed)?;
                    let r = project(g, out.rectified_rgb, seed + 1)?;
                    let x = project(g, out.rectified_x, seed + 2)?;
                    let s = g.add(a, r)?;
                    g.add(s, x)
                },
                FD_EPS,
                None,
                seed,
            )
        }
        "decoder" => {
            let dec = MlpDecoder::declare(&mut pb, "decoder", &[2, 3, 4, 5], 4, 3);
            let xs = inputs(
                &mut pb,
                &[vec![2, 8, 8], vec![3, 4, 4], vec![4, 2, 2], vec![5, 1, 1]],
            );
            let mut store = pb.build(seed);
            grad_check_params(
                &mut store,
                |g, b| {
                    let f: Vec<Var> = xs.iter().map(|&x| b[x]).collect();
                    let y = dec.forward(g, b, &f)?;
                    project(g, y, seed)
                },
                FD_EPS,
                None,
                seed,
            )
        }
        "model" => gradcheck_model(seed),
        other => Err(Error::Usage(format!(
            "unknown block `{other}` (expected one of {})",
            GRAD_BLOCKS.join(", ")
        ))),
    }
}

/// End-to-end check of the tiny quad-modal model under cross entropy, probing
/// a seeded sample of coordinates per parameter tensor.
fn gradcheck_model(seed: u64) -> Result<f64> {
    let cfg = ModelConfig {
        num_classes: 5,
        ..ModelConfig::tiny(quad_modalities())
    };
    let mut model = CmNext::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Tensor> = (0..4)
        .map(|_| Tensor::from_fn(&[3, 32, 32], |_| rng.random_range(0.0..1.0)))
        .collect();
    let labels: Vec<Option<usize>> = (0..32 * 32).map(|_| Some(rng.random_range(0..5))).collect();
    // forward reads weights from the bound store only, so a clone can drive the graph
    let shell = model.clone();
    grad_check_params(
        model.params_mut(),
        |g, b| {
            let vars: Vec<Var> = frames.iter().map(|f| g.leaf(f)).collect();
            let logits = shell.forward(g, b, &vars)?;
            g.cross_entropy(logits, &labels)
        },
        FD_EPS,
        Some(2),
        seed,
    )
}

/// One [`Check`] per block, each the worst error over `seeds`.
pub fn gradcheck_all(blocks: &[&str], seeds: &[u64]) -> Result<Vec<Check>> {
    blocks
        .iter()
        .map(|&b| {
            let worst = seeds
                .iter()
                .map(|&s| gradcheck_block(b, s))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            Ok(Check::new(b, seeds.len(), worst, grad_tolerance(b)))
        })
        .collect()
}

/// Direct-loop cross-correlation with zero padding.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize, groups: usize) -> Tensor {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, cg, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let og = o / groups;
    debug_assert_eq!(cg * groups, c);
    Tensor::from_fn(&[o, oh, ow], |i| {
        let (oc, r) = (i / (oh * ow), i % (oh * ow));
        let (y, xx) = (r / ow, r % ow);
        let grp = oc / og;
        let mut acc = b[oc];
        for ci in 0..cg {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (y * stride + ky) as isize - pad as isize;
                    let ix = (xx * stride + kx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += w.data()[((oc * cg + ci) * k + ky) * k + kx]
                            * x.at3(grp * cg + ci, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

/// Same-shape window mean with zero padding and a fixed `k²` divisor.
pub fn naive_avg_pool(x: &Tensor, k: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let r = (k / 2) as isize;
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, xx) = (i / (h * w), (i / w) % h, i % w);
        let mut s = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let (iy, ix) = (y as isize + dy, xx as isize + dx);
                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                    s += x.at3(ch, iy as usize, ix as usize);
                }
            }
        }
        s / (k * k) as f64
    })
}

fn naive_linear(x: &[f64], n: usize, w: &Tensor, b: Option<&[f64]>) -> Vec<f64> {
    let (ci, co) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; n * co];
    for r in 0..n {
        for o in 0..co {
            let mut acc = b.map_or(0.0, |b| b[o]);
            for c in 0..ci {
                acc += x[r * ci + c] * w.data()[c * co + o];
            }
            out[r * co + o] = acc;
        }
    }
    out
}

fn naive_layer_norm(x: &[f64], n: usize, c: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for r in 0..n {
        let row = &x[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        for j in 0..c {
            out[r * c + j] = (row[j] - mean) / (var + LN_EPS).sqrt() * gamma[j] + beta[j];
        }
    }
    out
}

/// Multi-head attention from the definition, on `N x C` tokens.
fn naive_attention(blk: &MhsaBlock, store: &crate::nn::ParamStore, tokens: &[f64], h: usize, w: usize) -> Vec<f64> {
    let c = blk.channels;
    let n = h * w;
    let lin = |l: &crate::nn::layers::Linear, x: &[f64], rows: usize| {
        naive_linear(x, rows, store.get(l.weight), Some(store.get(l.bias).data()))
    };
    let q = lin(&blk.q, tokens, n);
    let (kv, nkv) = match &blk.sr {
        Some((conv, norm)) => {
            let map = Tensor::from_fn(&[c, h, w], |i| tokens[(i % (h * w)) * c + i / (h * w)]);
            let red = naive_conv2d(&map, store.get(conv.weight), store.get(conv.bias).data(), conv.stride, 0, 1);
            let (rh, rw) = (red.shape()[1], red.shape()[2]);
            let t: Vec<f64> = (0..rh * rw * c).map(|i| red.data()[(i % c) * rh * rw + i / c]).collect();
            let normed = naive_layer_norm(&t, rh * rw, c, store.get(norm.gamma).data(), store.get(norm.beta).data());
            (normed, rh * rw)
        }
        None => (tokens.to_vec(), n),
    };
    let k = lin(&blk.k, &kv, nkv);
    let v = lin(&blk.v, &kv, nkv);
    let d = c / blk.heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut merged = vec![0.0; n * c];
    for hd in 0..blk.heads {
        for i in 0..n {
            let s: Vec<f64> = (0..nkv)
                .map(|j| (0..d).map(|t| q[i * c + hd * d + t] * k[j * c + hd * d + t]).sum::<f64>() * scale)
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for t in 0..d {
                merged[i * c + hd * d + t] = (0..nkv).map(|j| e[j] / z * v[j * c + hd * d + t]).sum();
            }
        }
    }
    lin(&blk.proj, &merged, n)
}

/// Exhaustive selection: the winner beats every lower index strictly and every
/// higher index weakly.
pub fn hub_oracle(candidates: &[&[f64]], scores: &[&[f64]], channels: usize) -> Vec<f64> {
    let hw = scores[0].len();
    let mut out = vec![0.0; channels * hw];
    for p in 0..hw {
        let m = (0..scores.len())
            .find(|&m| {
                (0..scores.len()).all(|o| {
                    if o < m {
                        scores[m][p] > scores[o][p]
                    } else {
                        scores[m][p] >= scores[o][p]
                    }
                })
            })
            .expect("a maximum exists");
        for c in 0..channels {
            out[c * hw + p] = candidates[m][c * hw + p];
        }
    }
    out
}

/// Paints events in timestamp order (stable on ties) onto a blank frame.
pub fn events_oracle(stream: &EventStream, w: usize, h: usize) -> Vec<f64> {
    let mut ev: Vec<(usize, &Event)> = stream.events.iter().enumerate().collect();
    ev.sort_by_key(|(i, e)| (e.t, *i));
    let mut out = vec![0.0; 3 * w * h];
    for (_, e) in ev {
        let p = e.y * w + e.x;
        out[p] = if e.polarity < 0 { 1.0 } else { 0.0 };
        out[2 * w * h + p] = if e.polarity > 0 { 1.0 } else { 0.0 };
    }
    out
}

/// Mean IoU from pixel index sets, skipping classes absent from both.
pub fn miou_oracle(labels: &[usize], preds: &[usize], k: usize) -> Option<f64> {
    use std::collections::BTreeSet;
    let mut ious = Vec::new();
    for c in 0..k {
        let a: BTreeSet<usize> = labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect();
        let b: BTreeSet<usize> = preds.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect();
        let union = a.union(&b).count();
        if union > 0 {
            ious.push(a.intersection(&b).count() as f64 / union as f64);
        }
    }
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

fn check_conv(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let cases = 30;
    for _ in 0..cases {
        let groups = [1, 2][rng.random_range(0..2)];
        let c = groups * rng.random_range(1..4);
        let o = groups * rng.random_range(1..4);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..=k / 2);
        let (h, w) = (rng.random_range(k..9), rng.random_range(k..9));
        let x = rand_tensor(&mut rng, &[c, h, w]);
        let wt = rand_tensor(&mut rng, &[o, c / groups, k, k]);
        let b = rand_tensor(&mut rng, &[o]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.leaf(&x), g.leaf(&wt), g.leaf(&b));
        let y = g.conv2d(xv, wv, Some(bv), stride, pad, groups)?;
        worst = worst.max(g.tensor(y).max_abs_diff(&naive_conv2d(&x, &wt, b.data(), stride, pad, groups)));
    }
    Ok(Check::new("conv2d", cases, worst, 1e-12))
}

fn check_pool(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for k in [3, 5, 7, 11] {
        for _ in 0..5 {
            let (h, w) = (rng.random_range(1..14), rng.random_range(1..14));
            let x = rand_tensor(&mut rng, &[2, h, w]);
            let mut g = Graph::new();
            let xv = g.leaf(&x);
            let y = g.avg_pool_same(xv, k)?;
            worst = worst.max(g.tensor(y).max_abs_diff(&naive_avg_pool(&x, k)));
            cases += 1;
        }
    }
    Ok(Check::new("avg_pool", cases, worst, 1e-12))
}

fn check_linear(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (n, ci, co) = (rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..7));
        let x = rand_tensor(&mut rng, &[n, ci]);
        let w = rand_tensor(&mut rng, &[ci, co]);
        let b = rand_tensor(&mut rng, &[co]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.leaf(&x), g.leaf(&w), g.leaf(&b));
        let y = g.linear(xv, wv, Some(bv))?;
        let want = naive_linear(x.data(), n, &w, Some(b.data()));
        worst = worst.max(g.value(y).iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok(Check::new("linear", 20, worst, 1e-12))
}

fn check_attention(seed: u64) -> Result<Check> {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (heads, sr) in [(1, 1), (2, 1), (2, 2), (4, 4)] {
        for s in 0..3 {
            let mut pb = ParamBuilder::new();
            let blk = MhsaBlock::declare(&mut pb, "a", 8, heads, sr, 2)?;
            let mut store = pb.build(seed + s);
            // larger weights than the init so the softmax is far from uniform
            for t in store.tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v *= 20.0);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100 + s);
            let tokens = rand_tensor(&mut rng, &[16, 8]);
            let mut g = Graph::new();
            let b: Bound = store.bind(&mut g);
            let tv = g.leaf(&tokens);
            let tr = blk.attention(&mut g, &b, tv, 4, 4)?;
            let want = naive_attention(&blk, &store, tokens.data(), 4, 4);
            worst = worst.max(g.value(tr.output).iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            cases += 1;
        }
    }
    Ok(Check::new("attention", cases, worst, 1e-10))
}

/// Hub selection against the exhaustive oracle; the error counts mismatching bits.
pub fn check_hub(seeds: u64) -> Result<Check> {
    let mut mismatches = 0usize;
    let mut cases = 0;
    for m in 1..=4 {
        for c in [2, 8] {
            for size in [4, 8] {
                for seed in 0..seeds {
                    let mut pb = ParamBuilder::new();
                    let hub = SelfQueryHub::declare(&mut pb, "hub", c, m);
                    let mut store = pb.build(seed);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                    for t in store.tensors_mut() {
                        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
                    }
                    let feats: Vec<Tensor> = (0..m).map(|_| rand_tensor(&mut rng, &[c, size, size])).collect();
                    let mut g = Graph::new();
                    let b = store.bind(&mut g);
                    let vars: Vec<Var> = feats.iter().map(|f| g.leaf(f)).collect();
                    let tr = hub.forward_traced(&mut g, &b, &vars)?;
                    let cands: Vec<&[f64]> = tr.candidates.iter().map(|&v| g.value(v)).collect();
                    let scores: Vec<&[f64]> = tr.scores.iter().map(|&v| g.value(v)).collect();
                    let want = hub_oracle(&cands, &scores, c);
                    mismatches += g
                        .value(tr.output)
                        .iter()
                        .zip(&want)
                        .filter(|(a, b)| a.to_bits() != b.to_bits())
                        .count();
                    cases += 1;
                }
            }
        }
    }
    Ok(Check::new("sq_hub", cases, mismatches as f64, 0.0))
}

fn random_stream(rng: &mut ChaCha8Rng, w: usize, h: usize) -> EventStream {
    let n = rng.random_range(0..200);
    let events = (0..n)
        .map(|_| Event {
            x: rng.random_range(0..w),
            y: rng.random_range(0..h),
            t: rng.random_range(0..20),
            polarity: if rng.random_bool(0.5) { 1 } else { -1 },
        })
        .collect();
    EventStream { events, t0: 0, t1: 20 }
}

fn check_events(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0usize;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
        let s = random_stream(&mut rng, w, h);
        if events_to_frame(&s, w, h)?.data.data() != events_oracle(&s, w, h).as_slice() {
            bad += 1;
        }
    }
    Ok(Check::new("events_last_wins", 50, bad as f64, 0.0))
}

fn check_miou(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..6);
        let labels: Vec<usize> = (0..256).map(|_| rng.random_range(0..k)).collect();
        let preds: Vec<usize> = (0..256).map(|_| rng.random_range(0..k)).collect();
        let mut cm = ConfusionMatrix::new(k);
        cm.add(&labels.iter().map(|&l| Some(l)).collect::<Vec<_>>(), &preds)?;
        let got = cm.miou()?.mean;
        let want = miou_oracle(&labels, &preds, k).expect("non-empty");
        worst = worst.max((got - want).abs());
    }
    Ok(Check::new("miou", 100, worst, 0.0))
}

fn check_uniform_loss() -> Result<Check> {
    let mut g = Graph::new();
    let logits = g.constant(&[25, 4, 4], vec![0.7; 400])?;
    let labels: Vec<Option<usize>> = (0..16).map(|i| Some(i % 25)).collect();
    let l = g.cross_entropy(logits, &labels)?;
    Ok(Check::new("uniform_cross_entropy", 1, (g.scalar(l) - 25f64.ln()).abs(), 1e-9))
}

fn check_depth_frame() -> Result<Check> {
    let d_max = 80.0;
    let mid = (1.0f64 + d_max).sqrt() - 1.0;
    let f = depth_to_frame(&Tensor::new(vec![1, 3], vec![d_max, 1e-300, mid])?, d_max)?;
    let v = f.data.data();
    let err = (v[0] - 1.0).abs().max(v[1].abs()).max((v[2] - 0.5).abs());
    Ok(Check::new("depth_frame", 3, err, 1e-15))
}

fn check_camera(seed: u64) -> Result<Check> {
    let cam = CameraIntrinsics::new(91.0, 1042, 1042)?;
    let fx = 1042.0 / (2.0 * (91.0 * std::f64::consts::PI / 360.0).tan());
    let mut err = ((cam.fx() - fx) / fx).abs();
    if cam.project([0.0, 0.0, 7.0]) != Some((cam.u0(), cam.v0())) {
        err = f64::INFINITY;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = 0.0f64;
    for _ in 0..1000 {
        let (u, v) = (rng.random_range(0.0..1042.0), rng.random_range(0.0..1042.0));
        let z = rng.random_range(0.5..80.0);
        let (u2, v2) = cam.project(cam.back_project(u, v, z)).expect("in front");
        px = px.max((u - u2).abs().max((v - v2).abs()));
    }
    // focal error is relative (tolerance 1e-6); round trip is in pixels (tolerance 0.5)
    let scaled = err.max(px / 0.5 * 1e-6);
    Ok(Check::new("camera", 1001, scaled, 1e-6))
}

fn check_param_increment() -> Result<Check> {
    let pc = count_params(&ModelConfig::paper_b2(quad_modalities()))?;
    let closed: usize = [64usize, 128, 320, 512].iter().map(|c| SelfQueryHub::params_per_modality(*c)).sum();
    let err = (pc.per_modality_increment as f64 - 11_268.0).abs() + (closed as f64 - 11_268.0).abs();
    Ok(Check::new("param_increment", 1, err, 0.0))
}

/// Runs every oracle suite.
pub fn selftest(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        check_conv(seed)?,
        check_pool(seed)?,
        check_linear(seed)?,
        check_attention(seed)?,
        check_hub(20)?,
        check_events(seed)?,
        check_miou(seed)?,
        check_uniform_loss()?,
        check_depth_frame()?,
        check_camera(seed)?,
        check_param_increment()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hub_oracle_breaks_ties_low() {
        let c0 = [1.0, 1.0];
        let c1 = [2.0, 2.0];
        let out = hub_oracle(&[&c0, &c1], &[&[0.5, 0.2], &[0.5, 0.9]], 1);
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn unknown_block_is_usage() {
        assert!(matches!(gradcheck_block("nope", 0), Err(Error::Usage(_))));
    }
}
