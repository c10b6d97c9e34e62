use super::params::{BufferId, Context, Mode, ParamId, ParamStore};
use crate::autodiff::{KernelMap, Matrix, Tape, Tensor, TensorError};
use rand::Rng;
use std::sync::Arc;

pub const LEAKY_SLOPE: f64 = 0.1;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Kernel point convolution: aggregate neighbor features per kernel point, then
/// mix with the stacked `(K * in) x out` weight matrix.
pub fn kpconv_forward(tape: &mut Tape, feats: Tensor, weights: Tensor, map: &Arc<KernelMap>) -> Result<Tensor, TensorError> {
    if weights.rows() != map.kernels() * feats.cols() {
        return Err(TensorError::ShapeMismatch {
            op: "kpconv",
            left: feats.shape(),
            right: weights.shape(),
        });
    }
    let agg = tape.aggregate(feats, map.clone())?;
    tape.matmul(agg, weights)
}

/// Nearest-neighbor upsampling: fine row `i` copies coarse row `map[i]`.
pub fn nearest_upsample(tape: &mut Tape, coarse: Tensor, map: &Arc<[usize]>) -> Result<Tensor, TensorError> {
    tape.gather_rows(coarse, map.clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BufferId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Matrix::filled(1, channels, 1.0));
        let beta = store.add(format!("{name}.beta"), Matrix::zeros(1, channels));
        let stats = store.add_buffer(format!("{name}.running"), channels);
        Self { gamma, beta, stats }
    }

    pub fn forward(&self, ctx: &mut Context, x: Tensor) -> Result<Tensor, TensorError> {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.tape.batch_norm_train(x, g, b, BN_EPS)?;
                ctx.stat_updates.push((self.stats, stats));
                Ok(y)
            }
            Mode::Eval => {
                let rs = &ctx.store().buffers[self.stats.0];
                let (mean, var) = (rs.mean.clone(), rs.var.clone());
                ctx.tape.batch_norm_eval(x, g, b, &mean, &var, BN_EPS)
            }
        }
    }
}

/// Folds collected batch statistics into the running averages.
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[(BufferId, crate::autodiff::BatchStats)]) {
    for (id, s) in updates {
        let rs = &mut store.buffers[id.0];
        for c in 0..rs.mean.len() {
            rs.mean[c] = (1.0 - BN_MOMENTUM) * rs.mean[c] + BN_MOMENTUM * s.mean[c];
            rs.var[c] = (1.0 - BN_MOMENTUM) * rs.var[c] + BN_MOMENTUM * s.var[c];
        }
    }
}

/// KPConv block: convolution (no bias), batch norm, leaky ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct KpConvBlock {
    pub weight: ParamId,
    pub norm: BatchNorm,
    pub kernels: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl KpConvBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, kernels: usize, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), kernels * in_ch, out_ch, kernels * in_ch, rng);
        let norm = BatchNorm::new(store, &format!("{name}.bn"), out_ch);
        Self { weight, norm, kernels, in_ch, out_ch }
    }

    pub fn param_count(&self) -> usize {
        self.kernels * self.in_ch * self.out_ch + 2 * self.out_ch
    }

    pub fn forward(&self, ctx: &mut Context, feats: Tensor, map: &Arc<KernelMap>) -> Result<Tensor, TensorError> {
        let w = ctx.param(self.weight);
        let h = kpconv_forward(ctx.tape, feats, w, map)?;
        let h = self.norm.forward(ctx, h)?;
        Ok(ctx.tape.leaky_relu(h, LEAKY_SLOPE))
    }
}

/// Shared per-point linear layer; `head` skips norm and activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Unary {
    pub weight: ParamId,
    pub bias: ParamId,
    pub norm: Option<BatchNorm>,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Unary {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, head: bool, rng: &mut R) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), in_ch, out_ch, in_ch, rng);
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, out_ch));
        let norm = (!head).then(|| BatchNorm::new(store, &format!("{name}.bn"), out_ch));
        Self { weight, bias, norm, in_ch, out_ch }
    }

    pub fn is_head(&self) -> bool {
        self.norm.is_none()
    }

    pub fn param_count(&self) -> usize {
        self.in_ch * self.out_ch + self.out_ch + if self.norm.is_some() { 2 * self.out_ch } else { 0 }
    }

    pub fn forward(&self, ctx: &mut Context, x: Tensor) -> Result<Tensor, TensorError> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        let h = ctx.tape.matmul(x, w)?;
        let h = ctx.tape.add_row(h, b)?;
        match &self.norm {
            Some(norm) => {
                let h = norm.forward(ctx, h)?;
                Ok(ctx.tape.leaky_relu(h, LEAKY_SLOPE))
            }
            None => Ok(h),
        }
    }
}
