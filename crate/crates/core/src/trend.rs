//! Directional comparison of input features and fusion schemes over repeated
//! seeded runs on one synthetic dataset.
//!
//! The report is informative only: it records whether the expected ordering of
//! mean test mIoU_ch holds, but nothing here fails a run.

use crate::config::RunConfig;
use crate::exec::Execution;
use crate::features::FEATURE_NAMES;
use crate::features::STABILITY;
use crate::metrics::ConfusionMatrix;
use crate::nets::Architecture;
use crate::synth::{generate_dataset, Split, SynthError};
use crate::training::{predict_tile, train_from_config, InferParams, TileData, TrainError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrendError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Cloud(#[from] crate::cloud::CloudError),
    #[error("dataset has no {0} tiles")]
    EmptySplit(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrendVariant {
    pub name: String,
    pub architecture: Architecture,
    /// Extra hand-crafted inputs on top of the base configuration's.
    pub extra_inputs: Vec<String>,
}

/// The baseline, the baseline plus `Stability`, and encoder fusion.
pub fn default_variants() -> Vec<TrendVariant> {
    vec![
        TrendVariant { name: "siamese".into(), architecture: Architecture::Siamese, extra_inputs: vec![] },
        TrendVariant {
            name: "siamese+stability".into(),
            architecture: Architecture::Siamese,
            extra_inputs: vec![FEATURE_NAMES[STABILITY].into()],
        },
        TrendVariant { name: "encoder_fusion".into(), architecture: Architecture::EncoderFusion, extra_inputs: vec![] },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Test mIoU_ch per seed; `None` when no change class was present.
    pub miou_ch: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendCheck {
    pub claim: String,
    pub holds: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendReport {
    pub n_tiles: usize,
    pub data_seed: u64,
    pub variants: Vec<VariantSummary>,
    pub checks: Vec<TrendCheck>,
}

/// Mean and sample standard deviation of the finite entries.
pub fn mean_std(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.iter().flatten().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (Some(mean), Some(std))
}

fn config_for(base: &RunConfig, variant: &TrendVariant, seed: u64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.architecture.name = variant.architecture.as_str().into();
    for extra in &variant.extra_inputs {
        if !cfg.features.inputs.contains(extra) {
            cfg.features.inputs.push(extra.clone());
        }
    }
    cfg
}

/// Trains every variant once per seed and scores it on the test tiles.
pub fn run_trend(
    base: &RunConfig,
    variants: &[TrendVariant],
    seeds: &[u64],
    mut progress: impl FnMut(&str, u64, Option<f64>),
) -> Result<TrendReport, TrendError> {
    let (manifest, pairs) =
        generate_dataset(base.data.n_tiles, base.data.ratios, base.seed, base.tile_params(), Execution::current())?;
    let params = base.feature_params();
    let mut split_tiles: [Vec<TileData>; 3] = Default::default();
    for (entry, pair) in manifest.tiles.iter().zip(pairs) {
        let slot = match entry.split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        split_tiles[slot].push(TileData::from_pair(pair, Some(&params))?);
    }
    let [train, val, test] = &split_tiles;
    if train.is_empty() {
        return Err(TrendError::EmptySplit("train"));
    }
    let scored = if test.is_empty() { train } else { test };

    let mut summaries = Vec::new();
    for variant in variants {
        let mut scores = Vec::new();
        for &seed in seeds {
            let cfg = config_for(base, variant, seed);
            let (trainer, _) = train_from_config(&cfg, train, val, |_| {})?;
            let infer = InferParams {
                radius: cfg.training.cylinder_radius,
                spacing: cfg.evaluation.spacing,
                batch_size: cfg.training.batch_size,
            };
            let mut cm = ConfusionMatrix::new(crate::N_CLASSES);
            for tile in scored {
                let pred = predict_tile(&trainer, &tile.pc1, &tile.pc2, infer)?;
                let truth = tile.pc2.labels.as_deref().unwrap_or(&[]);
                cm.accumulate(truth, &pred).expect("labels are in range by construction");
            }
            let score = cm.miou_ch();
            progress(&variant.name, seed, score);
            scores.push(score);
        }
        let (mean, std) = mean_std(&scores);
        summaries.push(VariantSummary { name: variant.name.clone(), seeds: seeds.to_vec(), miou_ch: scores, mean, std });
    }

    let mean_of = |name: &str| summaries.iter().find(|s| s.name == name).and_then(|s| s.mean);
    let ge = |a: &str, b: &str| TrendCheck {
        claim: format!("mean mIoU_ch({a}) >= mean mIoU_ch({b})"),
        holds: mean_of(a).zip(mean_of(b)).map(|(x, y)| x >= y),
    };
    let checks = vec![ge("siamese+stability", "siamese"), ge("encoder_fusion", "siamese")];
    Ok(TrendReport { n_tiles: manifest.tiles.len(), data_seed: base.seed, variants: summaries, checks })
}
