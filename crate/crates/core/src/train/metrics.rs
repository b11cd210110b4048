use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `K x K` counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    /// `None` where the class never occurs in truth or prediction.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// Adds one image; unlabelled pixels are skipped.
    pub fn add(&mut self, labels: &[Option<usize>], preds: &[usize]) -> Result<()> {
        if labels.len() != preds.len() {
            return Err(Error::dim("pixels", format!("{} labels vs {} predictions", labels.len(), preds.len())));
        }
        for (i, (l, &p)) in labels.iter().zip(preds).enumerate() {
            let Some(l) = *l else { continue };
            if l >= self.classes || p >= self.classes {
                return Err(Error::Data(format!(
                    "class pair ({l}, {p}) at pixel {i} is outside [0, {})",
                    self.classes
                )));
            }
            self.counts[l * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::dim("classes", format!("{} vs {}", self.classes, other.classes)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Undefined("confusion matrix is empty".into()));
        }
        let diag: u64 = (0..self.classes).map(|k| self.get(k, k)).sum();
        Ok(diag as f64 / total as f64)
    }

    /// `IoU_k = TP / (TP + FP + FN)`, averaged over classes with a non-zero denominator.
    pub fn miou(&self) -> Result<MiouReport> {
        let k = self.classes;
        let per_class: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..k).map(|j| self.get(c, j)).sum();
                let col: u64 = (0..k).map(|i| self.get(i, c)).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::Undefined("mIoU of an empty confusion matrix".into()));
        }
        Ok(MiouReport {
            mean: present.iter().sum::<f64>() / present.len() as f64,
            per_class,
        })
    }
}

/// Per-pixel argmax over the class axis of `K x H x W` logits; ties go to the lower class.
pub fn argmax_classes(logits: &Tensor) -> Result<Vec<usize>> {
    let [k, h, w] = *logits.shape() else {
        return Err(Error::dim("logits", format!("expected K x H x W, got {:?}", logits.shape())));
    };
    let d = logits.data();
    let hw = h * w;
    Ok((0..hw)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if d[c * hw + p] > d[best * hw + p] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let mut cm = ConfusionMatrix::new(3);
        cm.add(&[Some(0), Some(2), None], &[0, 2, 1]).unwrap();
        let r = cm.miou().unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.per_class, vec![Some(1.0), None, Some(1.0)]);
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn half_half_truth_all_zero_prediction() {
        let mut cm = ConfusionMatrix::new(2);
        cm.add(&[Some(0), Some(0), Some(1), Some(1)], &[0; 4]).unwrap();
        let r = cm.miou().unwrap();
        assert_eq!(r.per_class, vec![Some(0.5), Some(0.0)]);
        assert_eq!(r.mean, 0.25);
    }

    #[test]
    fn empty_matrix_is_undefined() {
        assert!(matches!(ConfusionMatrix::new(4).miou(), Err(Error::Undefined(_))));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let t = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 1.0, 3.0]).unwrap();
        assert_eq!(argmax_classes(&t).unwrap(), vec![0, 1]);
    }
}
