use super::{CloudError, FeatureMatrix, PointCloud};
use crate::{Point3, N_CLASSES};
use std::collections::BTreeMap;

/// Grid subsampling anchored at the cloud's bounding-box minimum corner.
///
/// One output point per occupied voxel, placed at the barycenter of its points.
/// Features are averaged and labels decided by majority vote (ties go to the lowest
/// class id). Output is ordered by voxel key.
pub fn grid_subsample(cloud: &PointCloud, dl: f64) -> Result<PointCloud, CloudError> {
    let origin = match cloud.bounds() {
        Some((lo, _)) => lo,
        None => [0.0; 3],
    };
    grid_subsample_with_origin(cloud, dl, origin)
}

/// Grid subsampling with an explicit grid origin.
pub fn grid_subsample_with_origin(
    cloud: &PointCloud,
    dl: f64,
    origin: Point3,
) -> Result<PointCloud, CloudError> {
    if !(dl > 0.0) {
        return Err(CloudError::BadCell(dl));
    }
    let mut voxels: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = [
            ((p[0] - origin[0]) / dl).floor() as i64,
            ((p[1] - origin[1]) / dl).floor() as i64,
            ((p[2] - origin[2]) / dl).floor() as i64,
        ];
        voxels.entry(key).or_default().push(i);
    }

    let n = voxels.len();
    let mut points = Vec::with_capacity(n);
    let mut features = cloud
        .features
        .as_ref()
        .map(|f| FeatureMatrix::new(f.channels, Vec::with_capacity(n * f.channels)));
    let mut labels = cloud.labels.as_ref().map(|_| Vec::with_capacity(n));

    for members in voxels.values() {
        let inv = 1.0 / members.len() as f64;
        let mut c = [0.0; 3];
        for &i in members {
            for d in 0..3 {
                c[d] += cloud.points[i][d];
            }
        }
        points.push([c[0] * inv, c[1] * inv, c[2] * inv]);

        if let (Some(out), Some(src)) = (features.as_mut(), cloud.features.as_ref()) {
            let start = out.data.len();
            out.data.resize(start + src.channels, 0.0);
            for &i in members {
                for (acc, v) in out.data[start..].iter_mut().zip(src.row(i)) {
                    *acc += v;
                }
            }
            for acc in &mut out.data[start..] {
                *acc *= inv;
            }
        }
        if let (Some(out), Some(src)) = (labels.as_mut(), cloud.labels.as_ref()) {
            let mut votes = [0usize; N_CLASSES];
            for &i in members {
                votes[src[i] as usize] += 1;
            }
            let mut best = 0;
            for c in 1..N_CLASSES {
                if votes[c] > votes[best] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }

    Ok(PointCloud { points, features, labels, epoch: cloud.epoch })
}
