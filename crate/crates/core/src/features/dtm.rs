use crate::cloud::{CloudError, PointCloud, SpatialIndex};

/// Ground-height raster: per-cell minimum z, holes filled from the nearest
/// ground cell.
///
/// A cell counts as ground when its minimum z is within `max_step` of the lowest
/// cell inside `window` meters; raised cells (roofs with no ground return) are
/// treated like empty ones.
#[derive(Clone, Debug, PartialEq)]
pub struct DtmGrid {
    pub origin: [f64; 2],
    pub cell: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `heights[iy * nx + ix]`.
    pub heights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtmParams {
    pub cell: f64,
    pub window: f64,
    pub max_step: f64,
}

impl Default for DtmParams {
    fn default() -> Self {
        Self { cell: 5.0, window: 25.0, max_step: 3.0 }
    }
}

impl DtmGrid {
    pub fn build(cloud: &PointCloud, cell: f64) -> Result<Self, CloudError> {
        Self::build_with(cloud, DtmParams { cell, ..DtmParams::default() })
    }

    pub fn build_with(cloud: &PointCloud, params: DtmParams) -> Result<Self, CloudError> {
        let cell = params.cell;
        if !(cell > 0.0) {
            return Err(CloudError::BadCell(cell));
        }
        let (lo, hi) = cloud.bounds().ok_or(CloudError::Empty)?;
        let nx = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
        let mut heights = vec![f64::INFINITY; nx * ny];
        let origin = [lo[0], lo[1]];
        for p in &cloud.points {
            let ix = (((p[0] - lo[0]) / cell).floor() as usize).min(nx - 1);
            let iy = (((p[1] - lo[1]) / cell).floor() as usize).min(ny - 1);
            let h = &mut heights[iy * nx + ix];
            *h = h.min(p[2]);
        }

        let reach = (params.window / cell).ceil() as isize;
        let mut ground = heights.clone();
        for iy in 0..ny as isize {
            for ix in 0..nx as isize {
                let h = heights[iy as usize * nx + ix as usize];
                if !h.is_finite() {
                    continue;
                }
                let mut local = h;
                for jy in (iy - reach).max(0)..=(iy + reach).min(ny as isize - 1) {
                    for jx in (ix - reach).max(0)..=(ix + reach).min(nx as isize - 1) {
                        local = local.min(heights[jy as usize * nx + jx as usize]);
                    }
                }
                if h - local > params.max_step {
                    ground[iy as usize * nx + ix as usize] = f64::INFINITY;
                }
            }
        }
        let heights = ground;

        // nearest ground cell by center distance; ties resolve to the first in scan order
        let filled: Vec<usize> = (0..nx * ny).filter(|&c| heights[c].is_finite()).collect();
        if filled.len() < nx * ny {
            let centers: Vec<[f64; 3]> = filled
                .iter()
                .map(|&c| [(c % nx) as f64, (c / nx) as f64, 0.0])
                .collect();
            let index = SpatialIndex::build(&centers)?;
            let mut out = heights.clone();
            for c in 0..nx * ny {
                if !heights[c].is_finite() {
                    let nn = index.knn(&[(c % nx) as f64, (c / nx) as f64, 0.0], 1)?;
                    out[c] = heights[filled[nn[0].index]];
                }
            }
            return Ok(DtmGrid { origin, cell, nx, ny, heights: out });
        }
        Ok(DtmGrid { origin, cell, nx, ny, heights })
    }

    /// Ground height under `(x, y)`; positions outside the grid clamp to the border.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin[0]) / self.cell).floor();
        let fy = ((y - self.origin[1]) / self.cell).floor();
        let ix = (fx.max(0.0) as usize).min(self.nx - 1);
        let iy = (fy.max(0.0) as usize).min(self.ny - 1);
        self.heights[iy * self.nx + ix]
    }

    /// Height above ground, clamped at zero.
    pub fn normalized_height(&self, p: &[f64; 3]) -> f64 {
        (p[2] - self.height_at(p[0], p[1])).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::EpochTag;

    fn plane(z: f64) -> Vec<[f64; 3]> {
        let mut pts = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                pts.push([i as f64, j as f64, z]);
            }
        }
        pts
    }

    #[test]
    fn flat_plane() {
        let dtm = DtmGrid::build(&PointCloud::new(plane(2.0), EpochTag::Pc1), 5.0).unwrap();
        assert!(dtm.heights.iter().all(|&h| h == 2.0));
        assert_eq!(dtm.normalized_height(&[3.0, 3.0, 2.0]), 0.0);
        assert_eq!(dtm.normalized_height(&[3.0, 3.0, 12.0]), 10.0);
        assert_eq!(dtm.normalized_height(&[3.0, 3.0, 1.9]), 0.0);
    }

    #[test]
    fn building_over_ground() {
        // ground everywhere except a fully occluded 10 m block; roof 8 m up
        let mut pts: Vec<_> = plane(0.0)
            .into_iter()
            .filter(|p| !(p[0] >= 10.0 && p[0] < 20.0 && p[1] >= 10.0 && p[1] < 20.0))
            .collect();
        for i in 10..20 {
            for j in 10..20 {
                pts.push([i as f64, j as f64, 8.0]);
            }
        }
        // a ground point peeking into one roof cell
        pts.push([22.0, 12.0, 0.0]);
        let dtm = DtmGrid::build(&PointCloud::new(pts, EpochTag::Pc1), 5.0).unwrap();
        for (c, &h) in dtm.heights.iter().enumerate() {
            let (ix, iy) = (c % dtm.nx, c / dtm.nx);
            let occluded = (2..4).contains(&ix) && (2..4).contains(&iy);
            if !occluded {
                assert_eq!(h, 0.0, "cell {ix},{iy}");
            }
        }
        // roof-only cells inherit the surrounding ground
        assert_eq!(dtm.height_at(12.0, 12.0), 0.0);
        assert!(dtm.heights.iter().all(|&h| h == 0.0));

        // without roof points the block is empty and inherits ground
        let hole: Vec<_> = plane(0.0)
            .into_iter()
            .filter(|p| !(p[0] >= 10.0 && p[0] < 20.0 && p[1] >= 10.0 && p[1] < 20.0))
            .collect();
        let dtm = DtmGrid::build(&PointCloud::new(hole, EpochTag::Pc1), 5.0).unwrap();
        assert!(dtm.heights.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn single_point_propagates() {
        let mut pts = vec![[0.0, 0.0, 3.5]];
        pts.push([0.0, 40.0, 10.0]);
        let dtm = DtmGrid::build(&PointCloud::new(pts[..1].to_vec(), EpochTag::Pc1), 5.0).unwrap();
        assert_eq!(dtm.heights, vec![3.5]);
        assert_eq!(dtm.height_at(100.0, -100.0), 3.5);
    }
}
