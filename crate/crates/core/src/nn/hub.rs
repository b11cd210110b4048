//! Self-Query Hub: scores each supplementary modality per pixel and keeps the
//! best-scoring candidate.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::layers::Conv;
use crate::nn::params::{Bound, ParamBuilder};

/// Per-modality query parameters: a 3x3 depthwise conv and a `C -> 1` score conv.
#[derive(Debug, Clone, Copy)]
pub struct HubRecord {
    pub dw: Conv,
    pub score: Conv,
}

#[derive(Debug, Clone)]
pub struct SelfQueryHub {
    channels: usize,
    records: Vec<HubRecord>,
}

/// Intermediate values of one hub pass.
#[derive(Debug, Clone)]
pub struct HubTrace {
    pub output: Var,
    pub candidates: Vec<Var>,
    /// `1 x H x W` score masks, one per modality.
    pub scores: Vec<Var>,
    /// Winning modality index per pixel (row-major).
    pub winner: Vec<usize>,
}

impl SelfQueryHub {
    /// Declares `modalities` records under `{prefix}.{m}.*`.
    pub fn declare(pb: &mut ParamBuilder, prefix: &str, channels: usize, modalities: usize) -> Self {
        let records = (0..modalities)
            .map(|m| HubRecord {
                dw: Conv::depthwise(pb, &format!("{prefix}.{m}.dw"), channels, 3),
                score: Conv::declare(pb, &format!("{prefix}.{m}.score"), channels, 1, 1, 1, 0, 1),
            })
            .collect();
        Self { channels, records }
    }

    /// Scalars added by one more modality: `9C + C` for the depthwise conv, `C + 1` for the score conv.
    pub fn params_per_modality(channels: usize) -> usize {
        11 * channels + 1
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn modalities(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[HubRecord] {
        &self.records
    }

    pub fn param_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.dw.param_count() + r.score.param_count())
            .sum()
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, features: &[Var]) -> Result<Var> {
        Ok(self.forward_traced(g, b, features)?.output)
    }

    pub fn forward_traced(&self, g: &mut Graph, b: &Bound, features: &[Var]) -> Result<HubTrace> {
        if features.is_empty() {
            return Err(Error::Usage("self-query hub needs at least one modality".into()));
        }
        if features.len() != self.records.len() {
            return Err(Error::Usage(format!(
                "hub holds {} modality records but {} features were given",
                self.records.len(),
                features.len()
            )));
        }
        let shape = g.shape(features[0]).to_vec();
        if shape.len() != 3 || shape[0] != self.channels {
            return Err(Error::dim("channels", format!("hub expects {} x H x W, got {shape:?}", self.channels)));
        }
        for &f in &features[1..] {
            if g.shape(f) != shape.as_slice() {
                return Err(Error::dim("modality", format!("feature shapes differ: {shape:?} vs {:?}", g.shape(f))));
            }
        }
        let hw = shape[1] * shape[2];

        let mut candidates = Vec::with_capacity(features.len());
        let mut scores = Vec::with_capacity(features.len());
        for (rec, &f) in self.records.iter().zip(features) {
            let fhat = rec.dw.forward(g, b, f)?;
            let logit = rec.score.forward(g, b, fhat)?;
            let q = g.sigmoid(logit);
            let weighted = g.scale_pixels(fhat, q)?;
            candidates.push(g.add(f, weighted)?);
            scores.push(q);
        }

        let mut winner = vec![0usize; hw];
        for (p, slot) in winner.iter_mut().enumerate() {
            let mut best = g.value(scores[0])[p];
            for (m, &q) in scores.iter().enumerate().skip(1) {
                let v = g.value(q)[p];
                if v > best {
                    best = v;
                    *slot = m;
                }
            }
        }
        let output = g.pixel_select(&candidates, winner.clone())?;
        Ok(HubTrace {
            output,
            candidates,
            scores,
            winner,
        })
    }

    /// Multiply-accumulates of the hub over `m` modalities at `h x w`.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.records
            .iter()
            .map(|r| r.dw.macs(h, w) + r.score.macs(h, w) + (self.channels * h * w) as u64)
            .sum()
    }
}
