//! Loss, optimizer, class-balanced cylinder sampling, augmentation, checkpoints
//! and the training loop.

mod checkpoint;
mod infer;
mod sampler;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointError, RngState};
pub use infer::{predict_tile, InferParams};
pub use sampler::{augment_pair, augment_with, ClassSampler, SampleError};
pub use trainer::{
    fit_standardizer, tile_class_weights, train_from_config, EpochRecord, TileData, TrainConfig, TrainError, TrainOutcome,
    Trainer,
};

use crate::autodiff::{Matrix, Tape, Tensor, TensorError};
use crate::kpconv::ParamStore;
use std::sync::Arc;

/// Mean over points of `-w[y] * log p(y)`.
pub fn weighted_nll_loss(tape: &mut Tape, logp: Tensor, labels: &Arc<[usize]>, weights: &Arc<[f64]>) -> Result<Tensor, TensorError> {
    tape.nll_loss(logp, labels.clone(), weights.clone())
}

/// Inverse-frequency weights whose mean over the labelled points of
/// `histogram` is 1, so every present class carries the same total weight.
/// Absent classes get weight 0.
pub fn class_weights(histogram: &[u64]) -> Vec<f64> {
    let total: u64 = histogram.iter().sum();
    let present = histogram.iter().filter(|&&c| c > 0).count();
    if present == 0 {
        return vec![1.0; histogram.len()];
    }
    histogram
        .iter()
        .map(|&c| if c > 0 { total as f64 / (c as f64 * present as f64) } else { 0.0 })
        .collect()
}

/// `lr0 * decay^epoch`.
pub fn lr_schedule(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 * decay.powi(epoch as i32)
}

/// Classical momentum: `v <- mu * v + g`, `p <- p - lr * v`.
pub fn sgd_momentum_step(params: &mut [Matrix], grads: &[Matrix], velocity: &mut [Matrix], lr: f64, momentum: f64) {
    assert!(params.len() == grads.len() && grads.len() == velocity.len(), "optimizer state mismatch");
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        assert_eq!(p.shape(), g.shape(), "gradient shape");
        for ((pi, gi), vi) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
}

/// SGD with momentum over a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64) -> Self {
        Self { momentum, velocity: store.values.iter().map(|m| Matrix::zeros(m.rows, m.cols)).collect() }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix], lr: f64) {
        sgd_momentum_step(&mut store.values, grads, &mut self.velocity, lr, self.momentum);
    }
}

/// Row-wise argmax.
pub fn argmax_rows(m: &Matrix) -> Vec<u8> {
    (0..m.rows)
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}
