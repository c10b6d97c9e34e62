use super::checkpoint::{Checkpoint, CheckpointError, RngState};
use super::sampler::{augment_pair, ClassSampler, SampleError};
use super::{argmax_rows, class_weights, lr_schedule, Sgd};
use crate::cloud::{extract_cylinder_pair, CloudError, CylinderPair, PointCloud};
use crate::config::RunConfig;
use crate::features::{compute_all_features, FeatureParams, N_FEATURES};
use crate::synth::LabeledPair;
use crate::exec::{self, Execution};
use crate::features::Standardizer;
use crate::kpconv::{apply_stat_updates, Context, Mode, StagePlan};
use crate::metrics::ConfusionMatrix;
use crate::nets::{NetError, NetworkGraph, PairBatch, PreparedPair};
use crate::autodiff::Tape;
use crate::N_CLASSES;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::mpsc;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("batch carries no labels")]
    Unlabeled,
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("could not draw a non-empty cylinder pair after {0} attempts")]
    EmptyCylinders(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub pairs_per_epoch: usize,
    pub val_pairs: usize,
    pub epochs: usize,
    pub cylinder_radius: f64,
    pub augment: bool,
    pub jitter_std: f64,
    pub prefetch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        let t = &cfg.training;
        Self {
            lr0: t.lr0,
            momentum: t.momentum,
            decay: t.decay,
            batch_size: t.batch_size,
            pairs_per_epoch: t.pairs_per_epoch,
            val_pairs: t.val_pairs,
            epochs: t.epochs,
            cylinder_radius: t.cylinder_radius,
            augment: t.augment,
            jitter_std: t.jitter_std,
            prefetch: t.prefetch,
            seed: cfg.seed,
        }
    }
}

/// A tile with raw (unstandardized) hand-crafted features, if any.
#[derive(Clone, Debug)]
pub struct TileData {
    pub pc1: PointCloud,
    pub pc2: PointCloud,
}

impl TileData {
    /// Attaches hand-crafted features to both epochs when `params` is given.
    pub fn from_pair(pair: LabeledPair, params: Option<&FeatureParams>) -> Result<Self, CloudError> {
        let LabeledPair { mut pc1, mut pc2 } = pair;
        if let Some(params) = params {
            let (f1, f2) = compute_all_features(&pc1, &pc2, params)?;
            pc1.features = Some(f1.0);
            pc2.features = Some(f2.0);
        }
        Ok(Self { pc1, pc2 })
    }
}

/// Per-channel statistics over both epochs of the training tiles.
pub fn fit_standardizer(tiles: &[TileData]) -> Standardizer {
    let mats = tiles.iter().flat_map(|t| [&t.pc1.features, &t.pc2.features]).flatten();
    Standardizer::fit(N_FEATURES, mats)
}

/// Builds a fresh network from `cfg` and trains it, leaving the best
/// checkpoint loaded.
pub fn train_from_config(
    cfg: &RunConfig,
    train: &[TileData],
    val: &[TileData],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Trainer, TrainOutcome), TrainError> {
    cfg.validate()?;
    let net = NetworkGraph::build(cfg.net_config()?, cfg.seed)?;
    let standardizer = if cfg.features.inputs.is_empty() { Standardizer::identity(N_FEATURES) } else { fit_standardizer(train) };
    let mut trainer = Trainer::new(net, TrainConfig::from_run(cfg), tile_class_weights(train), standardizer, cfg.canonical());
    let outcome = trainer.train(train, val, on_epoch)?;
    trainer.restore(&outcome.best)?;
    Ok((trainer, outcome))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_miou_ch: Option<f64>,
    pub train_macc: Option<f64>,
    pub val_miou_ch: Option<f64>,
    pub val_macc: Option<f64>,
    pub best: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss.
    pub aborted: Option<String>,
}

/// Everything needed to turn raw cylinder pairs into network batches.
#[derive(Clone, Debug)]
struct BatchFactory {
    plan: StagePlan,
    channels: Vec<usize>,
    standardizer: Standardizer,
    radius: f64,
    augment: bool,
    jitter_std: f64,
    exec: Execution,
}

const MAX_DRAWS: usize = 1000;

impl BatchFactory {
    fn standardize(&self, mut pair: CylinderPair) -> CylinderPair {
        if !self.channels.is_empty() {
            for cloud in [&mut pair.sub1, &mut pair.sub2] {
                if let Some(f) = &cloud.features {
                    cloud.features = Some(self.standardizer.apply(f));
                }
            }
        }
        pair
    }

    fn draw(&self, tiles: &[TileData], sampler: &ClassSampler, rng: &mut ChaCha8Rng) -> Result<CylinderPair, TrainError> {
        for _ in 0..MAX_DRAWS {
            let (_, t, i) = sampler.draw(rng);
            let p = tiles[t].pc2.points[i];
            match extract_cylinder_pair(&tiles[t].pc1, &tiles[t].pc2, [p[0], p[1]], self.radius) {
                Ok(pair) => return Ok(pair),
                Err(CloudError::EmptyCrop(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Err(TrainError::EmptyCylinders(MAX_DRAWS))
    }

    fn prepare(&self, pairs: Vec<CylinderPair>) -> Result<Vec<PreparedPair>, TrainError> {
        let pairs: Vec<CylinderPair> = pairs.into_iter().map(|p| self.standardize(p)).collect();
        exec::map_slice(self.exec, &pairs, |p| PreparedPair::new(p, &self.plan, &self.channels, Execution::Sequential))
            .into_iter()
            .map(|r| r.map_err(TrainError::from))
            .collect()
    }

    fn batch(&self, tiles: &[TileData], sampler: &ClassSampler, rng: &mut ChaCha8Rng, n: usize) -> Result<PairBatch, TrainError> {
        let mut raw = Vec::with_capacity(n);
        for _ in 0..n {
            let pair = self.draw(tiles, sampler, rng)?;
            raw.push(if self.augment { augment_pair(&pair, self.jitter_std, rng) } else { pair });
        }
        Ok(PairBatch::collate(&self.prepare(raw)?)?)
    }
}

/// Optimizer state and the network being trained.
pub struct Trainer {
    pub net: NetworkGraph,
    pub sgd: Sgd,
    pub cfg: TrainConfig,
    pub class_weights: Arc<[f64]>,
    pub standardizer: Standardizer,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub config_text: String,
}

impl Trainer {
    pub fn new(net: NetworkGraph, cfg: TrainConfig, class_weights: Vec<f64>, standardizer: Standardizer, config_text: String) -> Self {
        let sgd = Sgd::new(&net.store, cfg.momentum);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self { net, sgd, cfg, class_weights: class_weights.into(), standardizer, rng, epoch: 0, config_text }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            self.config_text.clone(),
            self.epoch as u64,
            RngState::capture(&self.rng),
            &self.net.store,
            &self.sgd.velocity,
            self.standardizer.clone(),
            self.class_weights.to_vec(),
        )
    }

    /// Rebuilds the network described by the checkpoint's embedded config and
    /// loads its state.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let cfg = RunConfig::parse(&ck.config)?;
        let net = NetworkGraph::build(cfg.net_config()?, cfg.seed)?;
        let mut trainer = Self::new(net, TrainConfig::from_run(&cfg), ck.class_weights.clone(), ck.standardizer.clone(), ck.config.clone());
        trainer.restore(ck)?;
        Ok(trainer)
    }

    /// Restores parameters, buffers, optimizer and generator state.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<(), TrainError> {
        ck.load_into(&mut self.net.store)?;
        if ck.velocity.len() == self.sgd.velocity.len() {
            self.sgd.velocity.clone_from(&ck.velocity);
        }
        self.rng = ck.rng.restore();
        self.epoch = ck.epoch as usize;
        self.standardizer = ck.standardizer.clone();
        self.class_weights = ck.class_weights.clone().into();
        Ok(())
    }

    fn factory(&self, augment: bool) -> BatchFactory {
        BatchFactory {
            plan: self.net.config.plan.clone(),
            channels: self.net.config.feature_channels.clone(),
            standardizer: self.standardizer.clone(),
            radius: self.cfg.cylinder_radius,
            augment: augment && self.cfg.augment,
            jitter_std: self.cfg.jitter_std,
            exec: Execution::current(),
        }
    }

    /// Standardizes and preprocesses pairs for this network.
    pub fn prepare(&self, pairs: Vec<CylinderPair>) -> Result<Vec<PreparedPair>, TrainError> {
        self.factory(false).prepare(pairs)
    }

    pub fn lr(&self) -> f64 {
        lr_schedule(self.cfg.lr0, self.cfg.decay, self.epoch)
    }

    /// One forward/backward/update; returns the loss and the predicted labels.
    pub fn step(&mut self, batch: &PairBatch, lr: f64) -> Result<(f64, Vec<u8>), TrainError> {
        let labels = batch.labels.clone().ok_or(TrainError::Unlabeled)?;
        let mut tape = Tape::new();
        let (loss, preds, grads, updates) = {
            let mut ctx = Context::new(&mut tape, &self.net.store, Mode::Train);
            let logp = self.net.forward(&mut ctx, batch)?;
            let loss_t = super::weighted_nll_loss(ctx.tape, logp, &labels, &self.class_weights).map_err(NetError::from)?;
            let loss = ctx.tape.value(loss_t).data[0];
            let preds = argmax_rows(ctx.tape.value(logp));
            if !loss.is_finite() {
                return Ok((loss, preds));
            }
            let grads = ctx.param_gradients(loss_t).map_err(NetError::from)?;
            (loss, preds, grads, std::mem::take(&mut ctx.stat_updates))
        };
        apply_stat_updates(&mut self.net.store, &updates);
        self.sgd.step(&mut self.net.store, &grads, lr);
        Ok((loss, preds))
    }

    /// Eval-mode predictions on the stage-0 PC2 points of a batch.
    pub fn predict(&self, batch: &PairBatch) -> Result<Vec<u8>, TrainError> {
        let mut tape = Tape::new();
        let mut ctx = Context::new(&mut tape, &self.net.store, Mode::Eval);
        let logp = self.net.forward(&mut ctx, batch)?;
        Ok(argmax_rows(tape.value(logp)))
    }

    /// Confusion matrix of eval-mode predictions against stage-0 labels.
    pub fn evaluate(&self, prepared: &[PreparedPair]) -> Result<ConfusionMatrix, TrainError> {
        let mut cm = ConfusionMatrix::new(N_CLASSES);
        for chunk in prepared.chunks(self.cfg.batch_size.max(1)) {
            let batch = PairBatch::collate(chunk)?;
            let preds = self.predict(&batch)?;
            let truth: Vec<u8> = batch.labels.as_ref().ok_or(TrainError::Unlabeled)?.iter().map(|&l| l as u8).collect();
            cm.accumulate(&truth, &preds).expect("labels in range");
        }
        Ok(cm)
    }

    /// Runs one epoch over the given batches; returns mean loss and the train matrix.
    pub fn run_epoch<I>(&mut self, batches: I) -> Result<(f64, ConfusionMatrix), TrainError>
    where
        I: IntoIterator<Item = Result<PairBatch, TrainError>>,
    {
        let lr = self.lr();
        let mut cm = ConfusionMatrix::new(N_CLASSES);
        let (mut total, mut n) = (0.0, 0usize);
        for batch in batches {
            let batch = batch?;
            let (loss, preds) = self.step(&batch, lr)?;
            if !loss.is_finite() {
                return Ok((loss, cm));
            }
            let truth: Vec<u8> = batch.labels.as_ref().unwrap().iter().map(|&l| l as u8).collect();
            cm.accumulate(&truth, &preds).expect("labels in range");
            total += loss;
            n += 1;
        }
        self.epoch += 1;
        Ok((total / n.max(1) as f64, cm))
    }

    /// Full protocol: class-balanced cylinders, augmentation, per-epoch
    /// validation and best-checkpoint retention. `on_epoch` sees every record.
    pub fn train(
        &mut self,
        train: &[TileData],
        val: &[TileData],
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainOutcome, TrainError> {
        let sampler = ClassSampler::new(train.iter().map(|t| t.pc2.labels.as_deref().unwrap_or(&[])))?;
        let val_prepared = if val.is_empty() || self.cfg.val_pairs == 0 {
            Vec::new()
        } else {
            let val_sampler = ClassSampler::new(val.iter().map(|t| t.pc2.labels.as_deref().unwrap_or(&[])))?;
            let mut vrng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            vrng.set_stream(u64::MAX);
            let f = self.factory(false);
            let raw = (0..self.cfg.val_pairs).map(|_| f.draw(val, &val_sampler, &mut vrng)).collect::<Result<Vec<_>, _>>()?;
            f.prepare(raw)?
        };
        let steps = self.cfg.pairs_per_epoch.div_ceil(self.cfg.batch_size.max(1));
        let mut best = self.checkpoint();
        let mut best_score: Option<f64> = None;
        let mut history = Vec::new();
        let mut aborted = None;
        let prefetch = if exec::is_strict() { 0 } else { self.cfg.prefetch };
        while self.epoch < self.cfg.epochs {
            let good = self.checkpoint();
            let lr = self.lr();
            let epoch_seed: u64 = self.rng.random();
            let factory = self.factory(true);
            let sizes: Vec<usize> = (0..steps)
                .map(|s| (self.cfg.pairs_per_epoch - s * self.cfg.batch_size).min(self.cfg.batch_size))
                .collect();
            let result = if prefetch == 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
                let iter = sizes.iter().map(|&n| factory.batch(train, &sampler, &mut rng, n));
                self.run_epoch(iter)
            } else {
                std::thread::scope(|scope| {
                    let (tx, rx) = mpsc::sync_channel(prefetch);
                    let (factory, sampler, sizes) = (&factory, &sampler, &sizes);
                    scope.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
                        for &n in sizes {
                            if tx.send(factory.batch(train, sampler, &mut rng, n)).is_err() {
                                break;
                            }
                        }
                    });
                    self.run_epoch(rx)
                })
            };
            let (loss, train_cm) = result?;
            if !loss.is_finite() {
                let reason = format!("non-finite loss at epoch {}", good.epoch);
                log::error!("{reason}; restoring the last good checkpoint");
                self.restore(&good)?;
                aborted = Some(reason);
                break;
            }
            let val_cm = if val_prepared.is_empty() { None } else { Some(self.evaluate(&val_prepared)?) };
            let score = val_cm.as_ref().map_or(train_cm.miou_ch(), |c| c.miou_ch());
            let improved = match (score, best_score) {
                (Some(s), Some(b)) => s > b,
                (Some(_), None) => true,
                (None, _) => best_score.is_none(),
            };
            let record = EpochRecord {
                epoch: self.epoch - 1,
                lr,
                train_loss: loss,
                train_miou_ch: train_cm.miou_ch(),
                train_macc: train_cm.macc(),
                val_miou_ch: val_cm.as_ref().and_then(|c| c.miou_ch()),
                val_macc: val_cm.as_ref().and_then(|c| c.macc()),
                best: improved,
            };
            log::info!(
                "epoch {} lr {:.3e} loss {:.4} train mIoU_ch {:?} val mIoU_ch {:?}",
                record.epoch, lr, loss, record.train_miou_ch, record.val_miou_ch
            );
            on_epoch(&record);
            history.push(record);
            if improved {
                best = self.checkpoint();
                best.best_miou_ch = score;
                best_score = score.or(best_score);
            }
        }
        let mut last = self.checkpoint();
        last.best_miou_ch = best_score;
        Ok(TrainOutcome { best, last, history, aborted })
    }
}

/// Class weights from the labels of all training tiles.
pub fn tile_class_weights(tiles: &[TileData]) -> Vec<f64> {
    let mut h = [0u64; N_CLASSES];
    for t in tiles {
        for (c, n) in t.pc2.class_histogram().iter().enumerate() {
            h[c] += n;
        }
    }
    class_weights(&h)
}
