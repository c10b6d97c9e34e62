//! Hand-crafted per-point features.
//!
//! Ten channels in a fixed order: normal (`Nx, Ny, Nz`), linearity, planarity,
//! omnivariance, `Z_range`, `Z_rank`, normalized height `nH` and the bi-temporal
//! `Stability`. All but `Stability` use the point's `k` nearest neighbors in its
//! own cloud (the point included). `Stability` counts the other epoch's points in a
//! sphere and in an unbounded vertical cylinder of the same radius.

mod dtm;
mod eigen;
mod standardize;

pub use dtm::{DtmGrid, DtmParams};
pub use eigen::{covariance, covariance_eigen, eigenfeatures, normal, Degenerate, EigenTriple, Eigenfeatures, Normal};
pub use standardize::Standardizer;

use crate::cloud::{CloudError, FeatureMatrix, PointCloud, SpatialIndex};
use crate::exec::{self, Execution};
use crate::Point3;

pub const N_FEATURES: usize = 10;

pub const NX: usize = 0;
pub const NY: usize = 1;
pub const NZ: usize = 2;
pub const LINEARITY: usize = 3;
pub const PLANARITY: usize = 4;
pub const OMNIVARIANCE: usize = 5;
pub const Z_RANGE: usize = 6;
pub const Z_RANK: usize = 7;
pub const NORMALIZED_HEIGHT: usize = 8;
pub const STABILITY: usize = 9;

pub const FEATURE_NAMES: [&str; N_FEATURES] =
    ["Nx", "Ny", "Nz", "L", "P", "O", "Z_range", "Z_rank", "nH", "Stability"];

/// `N x 10` feature matrix in the channel order above.
#[derive(Clone, Debug, PartialEq)]
pub struct HandCraftedFeatures(pub FeatureMatrix);

impl HandCraftedFeatures {
    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.0.row(i)[c]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureParams {
    /// Neighborhood size for eigen and height features.
    pub k: usize,
    /// Sphere/cylinder radius for `Stability`, meters.
    pub r_stab: f64,
    pub dtm: DtmParams,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self { k: 10, r_stab: 5.0, dtm: DtmParams::default() }
    }
}

/// Counts of points whose neighborhood fell back to defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FeatureReport {
    pub degenerate: usize,
    pub ambiguous_normals: usize,
}

/// `Z_range` and the 0-based rank of `center` among `neighbors` by `(z, index)`.
pub fn height_features(points: &[Point3], center: usize, neighbors: &[usize]) -> (f64, usize) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let zc = points[center][2];
    let mut rank = 0;
    for &j in neighbors {
        let z = points[j][2];
        lo = lo.min(z);
        hi = hi.max(z);
        if z < zc || (z == zc && j < center) {
            rank += 1;
        }
    }
    (hi - lo, rank)
}

/// `100 * n3d / n2d` against the other epoch's index; `0` for an empty column.
pub fn stability(point: &Point3, other: &SpatialIndex, r: f64) -> Result<f64, CloudError> {
    let n2d = other.count_cylinder(point, r)?;
    if n2d == 0 {
        return Ok(0.0);
    }
    let n3d = other.count_sphere(point, r)?;
    Ok(100.0 * n3d as f64 / n2d as f64)
}

struct PointFeatures {
    values: [f64; N_FEATURES],
    degenerate: bool,
    ambiguous: bool,
}

fn point_features(
    cloud: &PointCloud,
    own: &SpatialIndex,
    other: &SpatialIndex,
    dtm: &DtmGrid,
    k: usize,
    r_stab: f64,
    i: usize,
) -> Result<PointFeatures, CloudError> {
    let p = cloud.points[i];
    let nn = own.knn(&p, k)?;
    let ids: Vec<usize> = nn.iter().map(|n| n.index).collect();
    let nbhd: Vec<Point3> = ids.iter().map(|&j| cloud.points[j]).collect();

    let mut v = [0.0; N_FEATURES];
    let mut degenerate = false;
    let mut ambiguous = false;
    let eig = covariance_eigen(&nbhd).ok();
    match eig.as_ref().and_then(|e| eigenfeatures(e).map(|f| (e, f))) {
        Some((e, f)) => {
            let n = normal(e);
            ambiguous = n.ambiguous;
            v[NX..=NZ].copy_from_slice(&n.vector);
            v[LINEARITY] = f.linearity;
            v[PLANARITY] = f.planarity;
            v[OMNIVARIANCE] = f.omnivariance;
        }
        None => {
            degenerate = true;
            v[NZ] = 1.0;
        }
    }
    let (z_range, z_rank) = height_features(&cloud.points, i, &ids);
    v[Z_RANGE] = z_range;
    v[Z_RANK] = z_rank as f64;
    v[NORMALIZED_HEIGHT] = dtm.normalized_height(&p);
    v[STABILITY] = stability(&p, other, r_stab)?;
    Ok(PointFeatures { values: v, degenerate, ambiguous })
}

/// Features of `cloud`, with `Stability` measured against `other`.
pub fn cloud_features(
    cloud: &PointCloud,
    other: &PointCloud,
    params: &FeatureParams,
) -> Result<(HandCraftedFeatures, FeatureReport), CloudError> {
    if cloud.is_empty() || other.is_empty() {
        return Err(CloudError::Empty);
    }
    if !(params.r_stab > 0.0) {
        return Err(CloudError::BadRadius(params.r_stab));
    }
    let own = SpatialIndex::build(&cloud.points)?;
    let other_index = SpatialIndex::build(&other.points)?;
    let dtm = DtmGrid::build_with(cloud, params.dtm)?;
    let k = params.k.clamp(1, cloud.len());
    let per_point = exec::map_range(Execution::current(), cloud.len(), |i| {
        point_features(cloud, &own, &other_index, &dtm, k, params.r_stab, i)
    });
    let mut data = Vec::with_capacity(cloud.len() * N_FEATURES);
    let mut report = FeatureReport::default();
    for pf in per_point {
        let pf = pf?;
        data.extend_from_slice(&pf.values);
        report.degenerate += pf.degenerate as usize;
        report.ambiguous_normals += pf.ambiguous as usize;
    }
    Ok((HandCraftedFeatures(FeatureMatrix::new(N_FEATURES, data)), report))
}

/// Features of both epochs; each cloud's `Stability` uses the other cloud.
pub fn compute_all_features(
    pc1: &PointCloud,
    pc2: &PointCloud,
    params: &FeatureParams,
) -> Result<(HandCraftedFeatures, HandCraftedFeatures), CloudError> {
    let (f1, r1) = cloud_features(pc1, pc2, params)?;
    let (f2, r2) = cloud_features(pc2, pc1, params)?;
    if r1.degenerate + r2.degenerate > 0 {
        log::debug!("{} degenerate neighborhoods defaulted", r1.degenerate + r2.degenerate);
    }
    Ok((f1, f2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::EpochTag;

    fn plane_cloud(spacing: f64, half: i32, z: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in -half..=half {
            for j in -half..=half {
                pts.push([i as f64 * spacing, j as f64 * spacing, z]);
            }
        }
        PointCloud::new(pts, EpochTag::Pc1)
    }

    #[test]
    fn height_feature_cases() {
        let flat: Vec<Point3> = (0..4).map(|i| [i as f64, 0.0, 5.0]).collect();
        assert_eq!(height_features(&flat, 2, &[0, 1, 2, 3]), (0.0, 2));
        let stair: Vec<Point3> = (0..10).map(|i| [0.0, 0.0, i as f64]).collect();
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(height_features(&stair, 4, &all), (9.0, 4));
        assert_eq!(height_features(&stair, 9, &all), (9.0, 9));
    }

    #[test]
    fn stability_plane_and_demolition() {
        let plane = plane_cloud(1.0, 20, 0.0);
        let idx = SpatialIndex::build(&plane.points).unwrap();
        assert_eq!(stability(&[0.3, 0.2, 0.0], &idx, 5.0).unwrap(), 100.0);
        // roof point of a vanished building: column still holds ground, sphere is empty
        assert_eq!(stability(&[0.0, 0.0, 12.0], &idx, 5.0).unwrap(), 0.0);
        // empty column
        assert_eq!(stability(&[500.0, 0.0, 0.0], &idx, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn self_pair_is_symmetric_and_bounded() {
        let c = plane_cloud(1.0, 12, 1.0);
        let params = FeatureParams::default();
        let (a, b) = compute_all_features(&c, &c, &params).unwrap();
        assert_eq!(a, b);
        for i in 0..a.rows() {
            let r = a.row(i);
            assert!(r.iter().all(|v| v.is_finite()));
            assert!((0.0..=100.0).contains(&r[STABILITY]));
            assert!(r[NZ] >= 0.0);
            assert!(r[Z_RANK] < params.k as f64);
        }
    }

    #[test]
    fn degenerate_neighborhoods_default() {
        let c = PointCloud::new(vec![[1.0, 1.0, 1.0]; 12], EpochTag::Pc1);
        let (f, report) = cloud_features(&c, &c, &FeatureParams::default()).unwrap();
        assert_eq!(report.degenerate, 12);
        for i in 0..f.rows() {
            assert_eq!(&f.row(i)[..6], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        }
        let tiny = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], EpochTag::Pc1);
        let (f, report) = cloud_features(&tiny, &tiny, &FeatureParams::default()).unwrap();
        assert_eq!(report.degenerate, 2);
        assert!(f.0.data.iter().all(|v| v.is_finite()));
    }
}
