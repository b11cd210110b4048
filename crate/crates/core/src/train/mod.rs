//! Cross-entropy training with AdamW and a warm-up + poly schedule, plus
//! confusion-matrix evaluation grouped by corruption.

pub mod augment;
pub mod metrics;
pub mod optim;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::CmNext;
use crate::synth::Example;

pub use augment::{augment, flip_horizontal, AugmentConfig};
pub use metrics::{argmax_classes, ConfusionMatrix, MiouReport};
pub use optim::{adamw_step, poly_lr, AdamHyper, AdamW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub poly_power: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Label value treated as unlabelled, in addition to missing labels.
    pub ignore_index: Option<usize>,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 6e-5,
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 1e-2,
            epochs: 30,
            warmup_epochs: 10,
            poly_power: 0.9,
            batch_size: 4,
            seed: 0,
            ignore_index: Some(255),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "need warmup_epochs < epochs, got {} and {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(c) = self.augment.crop {
            if c % 32 != 0 {
                return Err(Error::Config(format!("crop size {c} is not divisible by 32")));
            }
        }
        self.augment.validate()
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.betas[0],
            beta2: self.betas[1],
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn lr_at(&self, epoch: usize, iter_frac: f64) -> f64 {
        poly_lr(epoch, iter_frac, self.lr, self.warmup_epochs, self.epochs, self.poly_power)
    }

    fn masked(&self, labels: &[Option<usize>]) -> Vec<Option<usize>> {
        labels.iter().map(|l| l.filter(|&c| Some(c) != self.ignore_index)).collect()
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub pixel_accuracy: f64,
    pub val_miou: Option<f64>,
}

/// Loss, parameter gradients and confusion counts of one example.
struct SampleGrad {
    loss: f64,
    grads: Vec<Vec<f64>>,
    cm: ConfusionMatrix,
}

fn sample_grad(model: &CmNext, ex: &Example, labels: &[Option<usize>]) -> Result<SampleGrad> {
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let frames: Vec<_> = ex.frames.iter().map(|f| g.leaf(f)).collect();
    let logits = model.forward(&mut g, &b, &frames)?;
    let loss = g.cross_entropy(logits, labels)?;
    g.backward(loss)?;
    let grads = b
        .vars()
        .iter()
        .zip(model.params().tensors())
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    let mut cm = ConfusionMatrix::new(model.config().num_classes);
    cm.add(labels, &argmax_classes(&g.tensor(logits))?)?;
    Ok(SampleGrad {
        loss: g.scalar(loss),
        grads,
        cm,
    })
}

/// Stateful optimiser loop over in-memory examples.
pub struct Trainer {
    pub model: CmNext,
    pub cfg: TrainConfig,
    opt: AdamW,
}

impl Trainer {
    pub fn new(model: CmNext, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = AdamW::new(model.params(), cfg.hyper());
        Ok(Self { model, cfg, opt })
    }

    /// Averages gradients over `batch` and applies one AdamW update at `lr`.
    /// Returns the mean loss and the confusion counts from before the update.
    pub fn step(&mut self, batch: &[Example], lr: f64) -> Result<(f64, ConfusionMatrix)> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let model = &self.model;
        let cfg = &self.cfg;
        let parts = batch
            .par_iter()
            .map(|ex| sample_grad(model, ex, &cfg.masked(&ex.labels)))
            .collect::<Result<Vec<_>>>()?;
        let n = parts.len() as f64;
        let mut grads = parts[0].grads.clone();
        let mut cm = parts[0].cm.clone();
        for p in &parts[1..] {
            for (a, b) in grads.iter_mut().zip(&p.grads) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            cm.merge(&p.cm)?;
        }
        grads.iter_mut().flatten().for_each(|v| *v /= n);
        let loss = parts.iter().map(|p| p.loss).sum::<f64>() / n;
        self.opt.step(self.model.params_mut(), &grads, lr)?;
        Ok((loss, cm))
    }

    /// One pass over `data` in a seeded order with per-sample augmentation.
    pub fn epoch(&mut self, data: &[Example], epoch: usize) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let batches: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
        let mut total_loss = 0.0;
        let mut cm = ConfusionMatrix::new(self.model.config().num_classes);
        let mut lr = 0.0;
        for (i, idx) in batches.iter().enumerate() {
            let batch = idx
                .iter()
                .map(|&j| augment(&data[j], rng.next_u64(), &self.cfg.augment))
                .collect::<Result<Vec<_>>>()?;
            lr = self.cfg.lr_at(epoch, i as f64 / batches.len() as f64);
            let (loss, part) = self.step(&batch, lr)?;
            total_loss += loss * idx.len() as f64;
            cm.merge(&part)?;
        }
        Ok(EpochLog {
            epoch,
            loss: total_loss / data.len() as f64,
            lr,
            pixel_accuracy: cm.pixel_accuracy().unwrap_or(0.0),
            val_miou: None,
        })
    }
}

/// Full schedule; `on_epoch` sees each log line as it is produced.
pub fn train(
    model: CmNext,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<(CmNext, Vec<EpochLog>)> {
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let mut t = Trainer::new(model, cfg.clone())?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut log = t.epoch(train_set, epoch)?;
        if !val_set.is_empty() {
            log.val_miou = Some(confusion(&t.model, val_set)?.miou().map(|r| r.mean).unwrap_or(0.0));
        }
        on_epoch(&log)?;
        logs.push(log);
    }
    Ok((t.model, logs))
}

/// Thread pool honouring `AMFUSE_THREADS` (default: rayon's choice).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("AMFUSE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("AMFUSE_THREADS must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

pub fn predict_classes(model: &CmNext, ex: &Example) -> Result<Vec<usize>> {
    argmax_classes(&model.predict(&ex.frames)?)
}

/// Confusion matrix over `data`, computed per sample in parallel and merged in order.
pub fn confusion(model: &CmNext, data: &[Example]) -> Result<ConfusionMatrix> {
    let k = model.config().num_classes;
    let parts = data
        .par_iter()
        .map(|ex| {
            let mut cm = ConfusionMatrix::new(k);
            cm.add(&ex.labels, &predict_classes(model, ex)?)?;
            Ok(cm)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::new(k);
    for p in &parts {
        cm.merge(p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub miou: Option<f64>,
    pub pixel_accuracy: Option<f64>,
    pub samples: usize,
}

/// Per-condition results in reporting order plus their mean mIoU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub groups: BTreeMap<String, GroupResult>,
    pub order: Vec<String>,
    pub mean: Option<f64>,
}

impl EvalReport {
    pub fn from_matrices(groups: Vec<(String, ConfusionMatrix, usize)>) -> Self {
        let order = groups.iter().map(|g| g.0.clone()).collect();
        let groups: BTreeMap<String, GroupResult> = groups
            .into_iter()
            .map(|(name, cm, samples)| {
                let r = GroupResult {
                    miou: cm.miou().ok().map(|r| r.mean),
                    pixel_accuracy: cm.pixel_accuracy().ok(),
                    samples,
                };
                (name, r)
            })
            .collect();
        let scores: Vec<f64> = groups.values().filter_map(|g| g.miou).collect();
        let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        Self { groups, order, mean }
    }

    /// Text table with one column per condition and a trailing mean.
    pub fn table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for name in &self.order {
            head.push_str(&format!("{name:>8}"));
            let v = self.groups[name].miou.map_or("-".to_string(), |m| format!("{:.2}", 100.0 * m));
            row.push_str(&format!("{v:>8}"));
        }
        head.push_str(&format!("{:>8}", "Mean"));
        row.push_str(&format!("{:>8}", self.mean.map_or("-".to_string(), |m| format!("{:.2}", 100.0 * m))));
        format!("{head}\n{row}\n")
    }
}

/// Evaluates every `(condition, examples)` group.
pub fn evaluate(model: &CmNext, groups: &[(String, Vec<Example>)]) -> Result<EvalReport> {
    let mats = groups
        .iter()
        .map(|(name, data)| Ok((name.clone(), confusion(model, data)?, data.len())))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_matrices(mats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_must_be_shorter_than_schedule() {
        let cfg = TrainConfig {
            epochs: 5,
            warmup_epochs: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn ignore_index_masks_labels() {
        let cfg = TrainConfig {
            ignore_index: Some(2),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.masked(&[Some(1), Some(2), None]), vec![Some(1), None, None]);
    }
}
