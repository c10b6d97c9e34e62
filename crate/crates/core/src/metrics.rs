//! Confusion-matrix metrics: per-class IoU, macro recall and change-class mean IoU.

use serde::Serialize;
use std::ops::AddAssign;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("truth has {truth} labels, prediction has {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
}

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Self {
        let classes = rows.len();
        assert!(rows.iter().all(|r| r.len() == classes), "confusion matrix must be square");
        Self { classes, counts: rows.concat() }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn accumulate<T: Copy + Into<usize>>(&mut self, truth: &[T], pred: &[T]) -> Result<(), MetricsError> {
        if truth.len() != pred.len() {
            return Err(MetricsError::LengthMismatch { truth: truth.len(), pred: pred.len() });
        }
        let c = self.classes;
        for (&t, &p) in truth.iter().zip(pred) {
            let (t, p) = (t.into(), p.into());
            if let Some(&label) = [t, p].iter().find(|&&l| l >= c) {
                return Err(MetricsError::LabelRange { label, classes: c });
            }
        }
        for (&t, &p) in truth.iter().zip(pred) {
            self.counts[t.into() * c + p.into()] += 1;
        }
        Ok(())
    }

    fn tp_fp_fn(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..self.classes).map(|t| self.get(t, c)).sum();
        (tp, col - tp, row - tp)
    }

    /// `TP / (TP + FP + FN)`; `None` for classes absent from truth and prediction.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let (tp, fp, fn_) = self.tp_fp_fn(c);
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// `TP / (TP + FN)`; `None` for classes absent from truth.
    pub fn per_class_recall(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let (tp, _, fn_) = self.tp_fp_fn(c);
                (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64)
            })
            .collect()
    }

    /// Mean IoU over change classes `1..C`, defined classes only.
    pub fn miou_ch(&self) -> Option<f64> {
        mean_defined(self.per_class_iou().into_iter().skip(1))
    }

    /// Macro-averaged recall over classes present in the ground truth.
    pub fn macc(&self) -> Option<f64> {
        mean_defined(self.per_class_recall().into_iter())
    }

    pub fn overall_accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (0..self.classes).map(|c| self.get(c, c)).sum::<u64>() as f64 / total as f64)
    }

    pub fn report(&self, class_names: &[&str]) -> MetricsReport {
        MetricsReport {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            confusion: self.rows(),
            per_class_iou: self.per_class_iou(),
            per_class_recall: self.per_class_recall(),
            miou_ch: self.miou_ch(),
            macc: self.macc(),
            overall_accuracy: self.overall_accuracy(),
            points: self.total(),
            truth_counts: (0..self.classes).map(|c| (0..self.classes).map(|p| self.get(c, p)).sum()).collect(),
        }
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "merging matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Structured evaluation output; `null` marks undefined metrics.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_recall: Vec<Option<f64>>,
    pub miou_ch: Option<f64>,
    pub macc: Option<f64>,
    pub overall_accuracy: Option<f64>,
    pub points: u64,
    pub truth_counts: Vec<u64>,
}
