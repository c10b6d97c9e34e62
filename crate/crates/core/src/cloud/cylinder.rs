use super::{CloudError, EpochTag, PointCloud};
use crate::Point3;

/// Co-located vertical-cylinder crops of both epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderPair {
    pub sub1: PointCloud,
    /// Carries the change labels.
    pub sub2: PointCloud,
    pub center_xy: [f64; 2],
    pub radius: f64,
}

#[inline]
pub fn in_cylinder(p: &Point3, center_xy: [f64; 2], radius: f64) -> bool {
    let dx = p[0] - center_xy[0];
    let dy = p[1] - center_xy[1];
    dx * dx + dy * dy <= radius * radius
}

fn crop(cloud: &PointCloud, center_xy: [f64; 2], radius: f64) -> PointCloud {
    let keep: Vec<usize> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| in_cylinder(p, center_xy, radius))
        .map(|(i, _)| i)
        .collect();
    cloud.subset(&keep)
}

/// Crops both epochs with the same unbounded vertical cylinder.
pub fn extract_cylinder_pair(
    pc1: &PointCloud,
    pc2: &PointCloud,
    center_xy: [f64; 2],
    radius: f64,
) -> Result<CylinderPair, CloudError> {
    if !(radius > 0.0) {
        return Err(CloudError::BadRadius(radius));
    }
    let sub1 = crop(pc1, center_xy, radius);
    let sub2 = crop(pc2, center_xy, radius);
    if sub1.is_empty() {
        return Err(CloudError::EmptyCrop(EpochTag::Pc1));
    }
    if sub2.is_empty() {
        return Err(CloudError::EmptyCrop(EpochTag::Pc2));
    }
    Ok(CylinderPair { sub1, sub2, center_xy, radius })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slab() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push([i as f64 - 10.0, j as f64 - 10.0, (i * j % 7) as f64]);
            }
        }
        let n = pts.len();
        PointCloud::new(pts, EpochTag::Pc2).with_labels(vec![1; n])
    }

    #[test]
    fn all_inside_is_identity() {
        let c = slab();
        let pair = extract_cylinder_pair(&c, &c, [0.0, 0.0], 100.0).unwrap();
        assert_eq!(pair.sub1, c);
        assert_eq!(pair.sub2.labels, c.labels);
    }

    #[test]
    fn far_center_is_empty() {
        let c = slab();
        assert!(matches!(
            extract_cylinder_pair(&c, &c, [500.0, 0.0], 5.0),
            Err(CloudError::EmptyCrop(EpochTag::Pc1))
        ));
    }

    #[test]
    fn half_slab_matches_membership() {
        let c = slab();
        let center = [-10.0, 0.0];
        let pair = extract_cylinder_pair(&c, &c, center, 6.0).unwrap();
        let expected: Vec<_> = c
            .points
            .iter()
            .filter(|p| (p[0] + 10.0).powi(2) + p[1].powi(2) <= 36.0)
            .copied()
            .collect();
        assert_eq!(pair.sub2.points, expected);
        assert!(pair.sub1.points.iter().all(|p| in_cylinder(p, center, 6.0)));
    }
}
