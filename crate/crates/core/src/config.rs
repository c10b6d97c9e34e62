//! Run configuration: a TOML document with a mandatory top-level `seed` and the
//! sections `data`, `features`, `architecture`, `training` and `evaluation`.

use crate::features::{FeatureParams, FEATURE_NAMES};
use crate::kpconv::StagePlan;
use crate::nets::{Architecture, NetConfig};
use crate::synth::{SplitRatios, TileParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_tiles: usize,
    pub ratios: SplitRatios,
    pub extent: [f64; 2],
    /// Points per square meter.
    pub density: f64,
    pub noise_std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let t = TileParams::default();
        Self { n_tiles: 40, ratios: SplitRatios::default(), extent: t.extent, density: t.density, noise_std: t.noise_std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub k: usize,
    pub r_stab: f64,
    pub dtm_cell: f64,
    pub dtm_window: f64,
    pub dtm_max_step: f64,
    /// Hand-crafted channels fed to the network, by name.
    pub inputs: Vec<String>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        let p = FeatureParams::default();
        Self {
            k: p.k,
            r_stab: p.r_stab,
            dtm_cell: p.dtm.cell,
            dtm_window: p.dtm.window,
            dtm_max_step: p.dtm.max_step,
            inputs: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureConfig {
    pub name: String,
    pub shared_weights: bool,
    pub dl0: f64,
    pub widths: Vec<usize>,
    pub kernel_points: usize,
    pub max_neighbors: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            name: "siamese".into(),
            shared_weights: true,
            dl0: 1.0,
            widths: vec![64, 128, 256, 512],
            kernel_points: 15,
            max_neighbors: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr0: f64,
    pub momentum: f64,
    /// Per-epoch exponential learning-rate decay.
    pub decay: f64,
    pub batch_size: usize,
    pub pairs_per_epoch: usize,
    pub val_pairs: usize,
    pub epochs: usize,
    pub cylinder_radius: f64,
    pub augment: bool,
    pub jitter_std: f64,
    /// Bounded queue of prepared batches; 0 disables prefetching.
    pub prefetch: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-2,
            momentum: 0.98,
            decay: 0.95,
            batch_size: 10,
            pairs_per_epoch: 600,
            val_pairs: 300,
            epochs: 20,
            cylinder_radius: 20.0,
            augment: true,
            jitter_std: 0.01,
            prefetch: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Cylinder-center grid spacing during inference, as a fraction of the radius.
    pub spacing: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { spacing: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

/// Commented template shipped with the repository.
pub const TEMPLATE: &str = include_str!("../../../config/template.toml");

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            data: DataConfig::default(),
            features: FeaturesConfig::default(),
            architecture: ArchitectureConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text`, letting `seed` override or supply the top-level seed.
    pub fn parse_with_seed(text: &str, seed: Option<u64>) -> Result<Self, ConfigError> {
        let Some(seed) = seed else { return Self::parse(text) };
        let mut table: toml::Table = toml::from_str(text)?;
        table.entry("seed").or_insert(toml::Value::Integer(0));
        let mut cfg: RunConfig = table.try_into()?;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Deterministic serialization of the parsed values.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.data.ratios.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.data.density > 0.0 && self.data.extent.iter().all(|v| *v > 0.0) && self.data.noise_std >= 0.0) {
            return bad("data: density and extent must be positive, noise_std non-negative".into());
        }
        self.architecture()?;
        self.input_channels()?;
        self.net_config()?.plan.validate().map_err(ConfigError::Invalid)?;
        let t = &self.training;
        if !(t.lr0 >= 0.0 && (0.0..1.0).contains(&t.momentum) && t.decay > 0.0 && t.decay <= 1.0) {
            return bad("training: need lr0 >= 0, momentum in [0, 1), decay in (0, 1]".into());
        }
        if t.batch_size == 0 || t.pairs_per_epoch == 0 || !(t.cylinder_radius > 0.0) || !(t.jitter_std >= 0.0) {
            return bad("training: batch_size, pairs_per_epoch and cylinder_radius must be positive".into());
        }
        let f = &self.features;
        if f.k < 3 || !(f.r_stab > 0.0) || !(f.dtm_cell > 0.0) {
            return bad("features: need k >= 3 and positive radii".into());
        }
        if !(self.evaluation.spacing > 0.0) {
            return bad("evaluation: spacing must be positive".into());
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture, ConfigError> {
        self.architecture.name.parse().map_err(ConfigError::Invalid)
    }

    /// Indices of the requested hand-crafted input channels.
    pub fn input_channels(&self) -> Result<Vec<usize>, ConfigError> {
        self.features
            .inputs
            .iter()
            .map(|name| {
                FEATURE_NAMES
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| ConfigError::Invalid(format!("unknown input feature `{name}` (known: {})", FEATURE_NAMES.join(", "))))
            })
            .collect()
    }

    pub fn stage_plan(&self) -> StagePlan {
        let a = &self.architecture;
        StagePlan { dl0: a.dl0, widths: a.widths.clone(), kernel_points: a.kernel_points, max_neighbors: a.max_neighbors }
    }

    pub fn net_config(&self) -> Result<NetConfig, ConfigError> {
        let mut cfg = NetConfig::new(self.architecture()?, self.stage_plan());
        cfg.shared_weights = self.architecture.shared_weights;
        cfg.feature_channels = self.input_channels()?;
        Ok(cfg)
    }

    pub fn feature_params(&self) -> FeatureParams {
        let f = &self.features;
        FeatureParams {
            k: f.k,
            r_stab: f.r_stab,
            dtm: crate::features::DtmParams { cell: f.dtm_cell, window: f.dtm_window, max_step: f.dtm_max_step },
        }
    }

    pub fn tile_params(&self) -> TileParams {
        TileParams { extent: self.data.extent, density: self.data.density, noise_std: self.data.noise_std }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parses_to_defaults() {
        let cfg = RunConfig::parse(TEMPLATE).unwrap();
        assert_eq!(cfg, RunConfig::with_seed(cfg.seed));
    }

    #[test]
    fn seed_override() {
        let cfg = RunConfig::parse_with_seed("[data]\nn_tiles = 3\n", Some(u64::MAX)).unwrap();
        assert_eq!((cfg.seed, cfg.data.n_tiles), (u64::MAX, 3));
        assert_eq!(RunConfig::parse_with_seed("seed = 4\n", Some(5)).unwrap().seed, 5);
        assert_eq!(RunConfig::parse_with_seed("seed = 4\n", None).unwrap().seed, 4);
    }

    #[test]
    fn seed_is_mandatory_and_unknown_keys_rejected() {
        assert!(RunConfig::parse("[data]\nn_tiles = 3\n").is_err());
        assert!(RunConfig::parse("seed = 1\nbogus = 2\n").is_err());
        assert!(RunConfig::parse("seed = 1\n[training]\nlearning_rate = 2\n").is_err());
        assert!(RunConfig::parse("seed = 1\n[architecture]\nname = \"unet\"\n").is_err());
        assert!(RunConfig::parse("seed = 1\n[features]\ninputs = [\"colour\"]\n").is_err());
        assert!(RunConfig::parse("seed = 1\n[data]\nratios = { train = 0.5, val = 0.1, test = 0.1 }\n").is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::with_seed(9);
        cfg.features.inputs = vec!["Stability".into()];
        cfg.architecture.name = "encoder_fusion".into();
        let text = cfg.canonical();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&text).unwrap().canonical(), text);
        assert_eq!(cfg.input_channels().unwrap(), vec![9]);
    }
}
