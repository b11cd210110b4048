use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// One AdamW update of a single tensor at step `t` (1-based).
///
/// Decay is decoupled: `p -= lr·wd·p` first, then the bias-corrected Adam step.
pub fn adamw_step(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    hp: &AdamHyper,
) -> Result<()> {
    if t == 0 {
        return Err(Error::Usage("AdamW step counter starts at 1".into()));
    }
    if g.len() != p.len() || m.len() != p.len() || v.len() != p.len() {
        return Err(Error::Usage(format!(
            "AdamW buffers disagree: {} params, {} grads, {}/{} moments",
            p.len(),
            g.len(),
            m.len(),
            v.len()
        )));
    }
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..p.len() {
        p[i] -= lr * hp.weight_decay * p[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= lr * mh / (vh.sqrt() + hp.eps);
    }
    Ok(())
}

/// Moment buffers for every tensor of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamW {
    pub hp: AdamHyper,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, hp: AdamHyper) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            hp,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Usage(format!(
                "{} gradient tensors for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.t += 1;
        for (i, t) in store.tensors_mut().iter_mut().enumerate() {
            adamw_step(t.data_mut(), &grads[i], &mut self.m[i], &mut self.v[i], self.t, lr, &self.hp)?;
        }
        Ok(())
    }
}

/// Learning rate at fractional epoch `epoch + iter_frac`: `0.1·lr` during
/// warm-up, then `lr·(1 - progress)^power` over the remaining epochs.
pub fn poly_lr(epoch: usize, iter_frac: f64, lr: f64, warmup_epochs: usize, epochs: usize, power: f64) -> f64 {
    let e = epoch as f64 + iter_frac;
    if e < warmup_epochs as f64 {
        return 0.1 * lr;
    }
    let span = (epochs - warmup_epochs.min(epochs)).max(1) as f64;
    let progress = ((e - warmup_epochs as f64) / span).clamp(0.0, 1.0);
    lr * (1.0 - progress).powf(power)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let hp = AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        let (mut p, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adamw_step(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, &hp).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let hp = AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        let (mut p, mut m, mut v) = ([0.3, -2.0], [0.0; 2], [0.0; 2]);
        adamw_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, 0.1, &hp).unwrap();
        assert_eq!(p, [0.3, -2.0]);
    }

    #[test]
    fn decay_is_decoupled() {
        let hp = AdamHyper::default();
        let (mut p, mut m, mut v) = ([2.0], [0.0], [0.0]);
        adamw_step(&mut p, &[0.0], &mut m, &mut v, 1, 0.5, &hp).unwrap();
        assert_eq!(p[0], 2.0 - 0.5 * 0.01 * 2.0);
    }

    #[test]
    fn bad_step_and_shapes_are_usage_errors() {
        let hp = AdamHyper::default();
        let (mut p, mut m, mut v) = ([1.0], [0.0], [0.0]);
        assert!(matches!(adamw_step(&mut p, &[1.0], &mut m, &mut v, 0, 0.1, &hp), Err(Error::Usage(_))));
        assert!(matches!(
            adamw_step(&mut p, &[1.0, 2.0], &mut m, &mut v, 1, 0.1, &hp),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(poly_lr(0, 0.0, 6e-5, 10, 200, 0.9), 0.1 * 6e-5);
        assert_eq!(poly_lr(10, 0.0, 6e-5, 10, 200, 0.9), 6e-5);
        assert_eq!(poly_lr(200, 0.0, 6e-5, 10, 200, 0.9), 0.0);
    }
}
