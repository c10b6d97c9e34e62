//! Point-cloud container, spatial indexing, subsampling and cylinder extraction.

mod cylinder;
mod index;
pub mod ply;
mod subsample;

pub use cylinder::{extract_cylinder_pair, in_cylinder, CylinderPair};
pub use index::{Neighbor, SpatialIndex};
pub use subsample::{grid_subsample, grid_subsample_with_origin};

use crate::{Point3, N_CLASSES};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("point cloud is empty")]
    Empty,
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("feature matrix has {rows} rows, cloud has {points} points")]
    FeatureRows { rows: usize, points: usize },
    #[error("label vector has {labels} entries, cloud has {points} points")]
    LabelCount { labels: usize, points: usize },
    #[error("label {label} at point {index} is out of range")]
    LabelRange { index: usize, label: u8 },
    #[error("k = {k} exceeds the number of indexed points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("grid cell size must be positive, got {0}")]
    BadCell(f64),
    #[error("cylinder crop is empty for {0}")]
    EmptyCrop(EpochTag),
}

/// Acquisition epoch of a cloud. Labels live on the newer epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EpochTag {
    #[default]
    Pc1,
    Pc2,
}

impl std::fmt::Display for EpochTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EpochTag::Pc1 => write!(f, "PC1"),
            EpochTag::Pc2 => write!(f, "PC2"),
        }
    }
}

/// Row-major per-point feature matrix.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureMatrix {
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(channels: usize, data: Vec<f64>) -> Self {
        Self { channels, data }
    }

    pub fn zeros(rows: usize, channels: usize) -> Self {
        Self { channels, data: vec![0.0; rows * channels] }
    }

    pub fn rows(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.data.len() / self.channels
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select(&self, channels: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.rows() * channels.len());
        for r in 0..self.rows() {
            let row = self.row(r);
            data.extend(channels.iter().map(|&c| row[c]));
        }
        FeatureMatrix::new(channels.len(), data)
    }
}

/// Points with optional per-point features and change labels.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub features: Option<FeatureMatrix>,
    pub labels: Option<Vec<u8>>,
    pub epoch: EpochTag,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, epoch: EpochTag) -> Self {
        Self { points, features: None, labels: None, epoch }
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn with_features(mut self, features: FeatureMatrix) -> Self {
        self.features = Some(features);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks every container invariant.
    pub fn validate(&self) -> Result<(), CloudError> {
        if let Some(i) = self.points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(CloudError::NonFinite(i));
        }
        if let Some(f) = &self.features {
            if f.rows() != self.len() || f.data.len() != f.channels * self.len() {
                return Err(CloudError::FeatureRows { rows: f.rows(), points: self.len() });
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(CloudError::LabelCount { labels: labels.len(), points: self.len() });
            }
            if let Some(i) = labels.iter().position(|&l| l as usize >= N_CLASSES) {
                return Err(CloudError::LabelRange { index: i, label: labels[i] });
            }
        }
        Ok(())
    }

    /// Copies the points at `indices` (features and labels follow).
    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            features: self.features.as_ref().map(|f| {
                let mut data = Vec::with_capacity(indices.len() * f.channels);
                for &i in indices {
                    data.extend_from_slice(f.row(i));
                }
                FeatureMatrix::new(f.channels, data)
            }),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            epoch: self.epoch,
        }
    }

    /// Axis-aligned bounding box `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(mut lo, mut hi), p| {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
            (lo, hi)
        }))
    }

    /// Per-class point counts over the labels (zeros if unlabelled).
    pub fn class_histogram(&self) -> [u64; N_CLASSES] {
        let mut h = [0u64; N_CLASSES];
        if let Some(labels) = &self.labels {
            for &l in labels {
                h[l as usize] += 1;
            }
        }
        h
    }
}

#[inline]
pub(crate) fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub(crate) fn dist2_xy(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}
