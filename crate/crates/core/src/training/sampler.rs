use crate::cloud::CylinderPair;
use crate::features::{NX, NY};
use crate::N_CLASSES;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("no labelled points to sample from")]
    NoLabels,
}

/// Draws cylinder centers so that every present class is chosen equally often:
/// a class uniformly among the present ones, then a uniform point of that class.
#[derive(Clone, Debug)]
pub struct ClassSampler {
    /// `(tile, point)` per class.
    by_class: Vec<Vec<(usize, usize)>>,
    present: Vec<usize>,
}

impl ClassSampler {
    pub fn new<'a, I: IntoIterator<Item = &'a [u8]>>(tiles: I) -> Result<Self, SampleError> {
        let mut by_class = vec![Vec::new(); N_CLASSES];
        for (t, labels) in tiles.into_iter().enumerate() {
            for (i, &l) in labels.iter().enumerate() {
                if (l as usize) < N_CLASSES {
                    by_class[l as usize].push((t, i));
                }
            }
        }
        let present: Vec<usize> = (0..N_CLASSES).filter(|&c| !by_class[c].is_empty()).collect();
        if present.is_empty() {
            return Err(SampleError::NoLabels);
        }
        for c in (0..N_CLASSES).filter(|c| by_class[*c].is_empty()) {
            log::warn!("class {} ({}) absent from the sampled tiles; skipped", c, crate::CLASS_NAMES[c]);
        }
        Ok(Self { by_class, present })
    }

    pub fn present_classes(&self) -> &[usize] {
        &self.present
    }

    /// `(class, tile, point)`.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> (usize, usize, usize) {
        let c = self.present[rng.random_range(0..self.present.len())];
        let pool = &self.by_class[c];
        let (t, i) = pool[rng.random_range(0..pool.len())];
        (c, t, i)
    }
}

/// Rotates both clouds by `theta` about the cylinder axis and adds Gaussian
/// jitter; normal channels of hand-crafted features rotate with the points.
pub fn augment_with<R: Rng>(pair: &CylinderPair, theta: f64, jitter_std: f64, rng: &mut R) -> CylinderPair {
    let (s, c) = theta.sin_cos();
    let [cx, cy] = pair.center_xy;
    let noise = (jitter_std > 0.0).then(|| Normal::new(0.0, jitter_std).expect("finite jitter"));
    let mut out = pair.clone();
    for cloud in [&mut out.sub1, &mut out.sub2] {
        for p in &mut cloud.points {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            p[0] = cx + c * dx - s * dy;
            p[1] = cy + s * dx + c * dy;
            if let Some(n) = &noise {
                for v in p.iter_mut() {
                    *v += n.sample(rng);
                }
            }
        }
        if let Some(f) = &mut cloud.features {
            if f.channels > NY {
                for r in 0..f.rows() {
                    let row = f.row_mut(r);
                    let (nx, ny) = (row[NX], row[NY]);
                    row[NX] = c * nx - s * ny;
                    row[NY] = s * nx + c * ny;
                }
            }
        }
    }
    out
}

/// One uniform angle in `[0, 2 pi)` shared by both clouds, plus jitter.
pub fn augment_pair<R: Rng>(pair: &CylinderPair, jitter_std: f64, rng: &mut R) -> CylinderPair {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    augment_with(pair, theta, jitter_std, rng)
}
