use super::{generate_pair, LabeledPair, SceneSpec, SynthError};
use crate::cloud::ply::{load_ply, save_ply, PlyError, PlyFormat};
use crate::exec::{self, Execution};
use crate::N_CLASSES;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), SynthError> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !(*v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SynthError::Ratios(r));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub id: usize,
    pub seed: u64,
    pub split: Split,
    pub pc1: String,
    pub pc2: String,
    pub points: [usize; 2],
    pub class_histogram: [u64; N_CLASSES],
    pub spec: SceneSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub extent: [f64; 2],
    pub density: f64,
    pub noise_std: f64,
    pub tiles: Vec<TileEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &TileEntry> {
        self.tiles.iter().filter(move |t| t.split == split)
    }

    pub fn histogram(&self, split: Split) -> [u64; N_CLASSES] {
        let mut h = [0; N_CLASSES];
        for t in self.split(split) {
            for c in 0..N_CLASSES {
                h[c] += t.class_histogram[c];
            }
        }
        h
    }

    /// Manifest restricted to one split.
    pub fn subset(&self, split: Split) -> DatasetManifest {
        DatasetManifest { tiles: self.split(split).cloned().collect(), ..self.clone() }
    }
}

/// Tile parameters shared by every tile of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileParams {
    pub extent: [f64; 2],
    pub density: f64,
    pub noise_std: f64,
}

impl Default for TileParams {
    fn default() -> Self {
        Self { extent: [100.0, 100.0], density: 0.5, noise_std: 0.05 }
    }
}

/// Draws tile seeds and splits, then generates every tile.
pub fn generate_dataset(
    n_tiles: usize,
    ratios: SplitRatios,
    seed: u64,
    params: TileParams,
    exec: Execution,
) -> Result<(DatasetManifest, Vec<LabeledPair>), SynthError> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = BTreeSet::new();
    let mut tile_seeds = Vec::with_capacity(n_tiles);
    while tile_seeds.len() < n_tiles {
        let s: u64 = rng.random();
        if seeds.insert(s) {
            tile_seeds.push(s);
        }
    }
    let mut order: Vec<usize> = (0..n_tiles).collect();
    order.shuffle(&mut rng);
    let n_train = (ratios.train * n_tiles as f64).round() as usize;
    let n_val = ((ratios.val * n_tiles as f64).round() as usize).min(n_tiles - n_train.min(n_tiles));
    let mut splits = vec![Split::Test; n_tiles];
    for (rank, &id) in order.iter().enumerate() {
        splits[id] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let specs: Vec<SceneSpec> = tile_seeds
        .iter()
        .map(|&s| SceneSpec { density: params.density, noise_std: params.noise_std, ..SceneSpec::random(params.extent, s) })
        .collect();
    let pairs = exec::map_slice(exec, &specs, generate_pair).into_iter().collect::<Result<Vec<_>, _>>()?;
    let tiles = (0..n_tiles)
        .map(|id| {
            let dir = splits[id].as_str();
            TileEntry {
                id,
                seed: tile_seeds[id],
                split: splits[id],
                pc1: format!("{dir}/tile_{id:04}_pc1.ply"),
                pc2: format!("{dir}/tile_{id:04}_pc2.ply"),
                points: [pairs[id].pc1.len(), pairs[id].pc2.len()],
                class_histogram: pairs[id].pc2.class_histogram(),
                spec: specs[id].clone(),
            }
        })
        .collect();
    let manifest =
        DatasetManifest { seed, ratios, extent: params.extent, density: params.density, noise_std: params.noise_std, tiles };
    Ok((manifest, pairs))
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// Writes PLY pairs under `<dir>/<split>/`, one manifest per split and a root manifest.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, pairs: &[LabeledPair], format: PlyFormat) -> Result<(), DatasetIoError> {
    for split in Split::ALL {
        fs::create_dir_all(dir.join(split.as_str()))?;
    }
    for (tile, pair) in manifest.tiles.iter().zip(pairs) {
        save_ply(&pair.pc1, dir.join(&tile.pc1), format)?;
        save_ply(&pair.pc2, dir.join(&tile.pc2), format)?;
    }
    for split in Split::ALL {
        let sub = manifest.subset(split);
        fs::write(dir.join(split.as_str()).join("manifest.json"), serde_json::to_string_pretty(&sub)? + "\n")?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DatasetIoError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Loads every tile of `split` listed in the root manifest of `dir`.
pub fn load_split(dir: &Path, split: Split) -> Result<(Vec<TileEntry>, Vec<LabeledPair>), DatasetIoError> {
    let manifest = read_manifest(&dir.join("manifest.json"))?;
    let tiles: Vec<TileEntry> = manifest.split(split).cloned().collect();
    let pairs = tiles
        .iter()
        .map(|t| Ok(LabeledPair { pc1: load_ply(dir.join(&t.pc1))?, pc2: load_ply(dir.join(&t.pc2))? }))
        .collect::<Result<Vec<_>, DatasetIoError>>()?;
    Ok((tiles, pairs))
}
