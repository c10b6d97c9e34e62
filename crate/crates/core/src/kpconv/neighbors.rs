use super::KernelDisposition;
use crate::autodiff::KernelMap;
use crate::cloud::{dist2, CloudError, SpatialIndex};
use crate::exec::{self, Execution};
use crate::Point3;

/// Support indices within `radius` of each query, nearest first, at most `cap`.
pub fn neighbor_lists(
    queries: &[Point3],
    supports: &SpatialIndex,
    radius: f64,
    cap: usize,
    exec: Execution,
) -> Result<Vec<Vec<usize>>, CloudError> {
    let lists = exec::map_range(exec, queries.len(), |q| {
        supports.radius_neighbors(&queries[q], radius).map(|mut nn| {
            nn.truncate(cap);
            nn.into_iter().map(|n| n.index).collect::<Vec<_>>()
        })
    });
    lists.into_iter().collect()
}

/// Linear kernel-point influence `max(0, 1 - |x_n - q - k| / sigma)` for every
/// `(query, neighbor, kernel point)`; zero influences are dropped.
pub fn influence_map(
    queries: &[Point3],
    supports: &[Point3],
    lists: &[Vec<usize>],
    kernel: &KernelDisposition,
    exec: Execution,
) -> KernelMap {
    let rows = exec::map_range(exec, queries.len(), |q| {
        let mut row = Vec::new();
        for &n in &lists[q] {
            let rel = [
                supports[n][0] - queries[q][0],
                supports[n][1] - queries[q][1],
                supports[n][2] - queries[q][2],
            ];
            for (k, off) in kernel.offsets.iter().enumerate() {
                let h = 1.0 - dist2(&rel, off).sqrt() / kernel.sigma;
                if h > 0.0 {
                    row.push((n, k, h));
                }
            }
        }
        row
    });
    KernelMap::from_rows(supports.len(), kernel.offsets.len(), &rows)
}

/// Index of the nearest support for every query (ties to the lower index).
pub fn nearest_map(queries: &[Point3], supports: &SpatialIndex, exec: Execution) -> Result<Vec<usize>, CloudError> {
    exec::map_range(exec, queries.len(), |q| supports.knn(&queries[q], 1).map(|nn| nn[0].index))
        .into_iter()
        .collect()
}
