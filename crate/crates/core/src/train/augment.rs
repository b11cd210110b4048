//! Training-time augmentation. Geometric transforms hit every frame and the
//! label map alike; photometric ones touch only the RGB frame (index 0).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::bilinear_resize;
use crate::error::{Error, Result};
use crate::synth::Example;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub scale: [f64; 2],
    pub flip_prob: f64,
    /// Square crop side; `None` crops back to the input size.
    pub crop: Option<usize>,
    pub jitter: [f64; 2],
    pub blur_prob: f64,
    pub blur_sigma: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scale: [0.5, 2.0],
            flip_prob: 0.5,
            crop: None,
            jitter: [0.8, 1.2],
            blur_prob: 0.5,
            blur_sigma: [0.1, 1.0],
        }
    }
}

impl AugmentConfig {
    /// Every transform pinned to the identity.
    pub fn identity() -> Self {
        Self {
            enabled: true,
            scale: [1.0, 1.0],
            flip_prob: 0.0,
            crop: None,
            jitter: [1.0, 1.0],
            blur_prob: 0.0,
            blur_sigma: [0.1, 0.1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        if !ordered(self.scale) || !ordered(self.jitter) || !ordered(self.blur_sigma) {
            return Err(Error::Config("augmentation ranges must be positive and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) || !(0.0..=1.0).contains(&self.blur_prob) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if self.crop == Some(0) {
            return Err(Error::Config("crop size must be positive".into()));
        }
        Ok(())
    }
}

fn sample(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn dims(ex: &Example) -> Result<(usize, usize)> {
    match ex.frames.first().map(|f| f.shape()) {
        Some(&[_, h, w]) if h * w == ex.labels.len() => Ok((h, w)),
        _ => Err(Error::dim("frames", "example needs C x H x W frames matching its labels")),
    }
}

/// Nearest-neighbour resample with the same half-pixel convention as the bilinear path.
pub fn resize_labels(labels: &[Option<usize>], h: usize, w: usize, oh: usize, ow: usize) -> Vec<Option<usize>> {
    let src = |o: usize, n: usize, on: usize| (((o as f64 + 0.5) * n as f64 / on as f64) as usize).min(n - 1);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = src(y, h, oh);
        for x in 0..ow {
            out.push(labels[sy * w + src(x, w, ow)]);
        }
    }
    out
}

pub fn flip_horizontal(ex: &Example) -> Result<Example> {
    let (h, w) = dims(ex)?;
    let mirror = |d: &[f64], c: usize| {
        let mut o = vec![0.0; c * h * w];
        for r in 0..c * h {
            for x in 0..w {
                o[r * w + x] = d[r * w + w - 1 - x];
            }
        }
        o
    };
    let frames = ex
        .frames
        .iter()
        .map(|f| Tensor::new(f.shape().to_vec(), mirror(f.data(), f.shape()[0])))
        .collect::<Result<Vec<_>>>()?;
    let mut labels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            labels.push(ex.labels[y * w + w - 1 - x]);
        }
    }
    Ok(Example {
        frames,
        labels,
        ..ex.clone()
    })
}

/// Places the `size x size` window at `(top, left)` of the (implicitly zero / unlabelled padded) image.
fn crop(ex: &Example, h: usize, w: usize, size: usize, top: usize, left: usize) -> Result<Example> {
    let frames = ex
        .frames
        .iter()
        .map(|f| {
            let c = f.shape()[0];
            let mut o = vec![0.0; c * size * size];
            for ch in 0..c {
                for y in 0..size.min(h - top.min(h)) {
                    for x in 0..size.min(w - left.min(w)) {
                        o[(ch * size + y) * size + x] = f.data()[(ch * h + top + y) * w + left + x];
                    }
                }
            }
            Tensor::new(vec![c, size, size], o)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut labels = vec![None; size * size];
    for y in 0..size.min(h - top.min(h)) {
        for x in 0..size.min(w - left.min(w)) {
            labels[y * size + x] = ex.labels[(top + y) * w + left + x];
        }
    }
    Ok(Example {
        frames,
        labels,
        ..ex.clone()
    })
}

fn gaussian_blur(t: &Tensor, sigma: f64) -> Result<Tensor> {
    let [c, h, w] = *t.shape() else { unreachable!("frames are 3-D") };
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let d = t.data();
    let mut tmp = vec![0.0; d.len()];
    let mut out = vec![0.0; d.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                tmp[base + y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * d[base + y * w + (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[base + y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * tmp[base + (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize * w + x])
                    .sum();
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Random resize, crop, horizontal flip, then RGB colour jitter and blur.
pub fn augment(ex: &Example, seed: u64, cfg: &AugmentConfig) -> Result<Example> {
    if !cfg.enabled {
        return Ok(ex.clone());
    }
    cfg.validate()?;
    let (h, w) = dims(ex)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let ratio = sample(&mut rng, cfg.scale);
    let (rh, rw) = (
        ((h as f64 * ratio).round() as usize).max(1),
        ((w as f64 * ratio).round() as usize).max(1),
    );
    let mut out = if (rh, rw) == (h, w) {
        ex.clone()
    } else {
        let frames = ex
            .frames
            .iter()
            .map(|f| {
                let c = f.shape()[0];
                let d = bilinear_resize(f.data(), c, h, w, rh, rw);
                Tensor::new(vec![c, rh, rw], d.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Example {
            frames,
            labels: resize_labels(&ex.labels, h, w, rh, rw),
            ..ex.clone()
        }
    };

    let size = cfg.crop.unwrap_or(h.max(w));
    let top = if rh > size { rng.random_range(0..=rh - size) } else { 0 };
    let left = if rw > size { rng.random_range(0..=rw - size) } else { 0 };
    if (rh, rw, top, left) != (size, size, 0, 0) {
        out = crop(&out, rh, rw, size, top, left)?;
    }

    if rng.random_bool(cfg.flip_prob) {
        out = flip_horizontal(&out)?;
    }

    let gains = [
        sample(&mut rng, cfg.jitter),
        sample(&mut rng, cfg.jitter),
        sample(&mut rng, cfg.jitter),
    ];
    if gains != [1.0; 3] {
        let rgb = &mut out.frames[0];
        let plane = size * size;
        for (ch, g) in gains.iter().enumerate() {
            for v in &mut rgb.data_mut()[ch * plane..(ch + 1) * plane] {
                *v = (*v * g).clamp(0.0, 1.0);
            }
        }
    }
    if rng.random_bool(cfg.blur_prob) {
        let sigma = sample(&mut rng, cfg.blur_sigma);
        out.frames[0] = gaussian_blur(&out.frames[0], sigma)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Example {
        Example {
            id: "0".into(),
            condition: "clean".into(),
            frames: vec![Tensor::from_fn(&[3, 4, 4], |i| (i % 5) as f64 / 5.0)],
            labels: (0..16).map(|i| Some(i % 3)).collect(),
        }
    }

    #[test]
    fn pinned_config_is_identity() {
        let ex = toy();
        for seed in 0..5 {
            assert_eq!(augment(&ex, seed, &AugmentConfig::identity()).unwrap(), ex);
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let ex = toy();
        assert_eq!(flip_horizontal(&flip_horizontal(&ex).unwrap()).unwrap(), ex);
    }

    #[test]
    fn blur_preserves_constants() {
        let t = Tensor::full(&[3, 5, 5], 0.4);
        assert!(gaussian_blur(&t, 0.8).unwrap().max_abs_diff(&t) < 1e-12);
    }
}
