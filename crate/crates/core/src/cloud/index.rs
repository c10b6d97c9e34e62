use super::{dist2, dist2_xy, CloudError};
use crate::Point3;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 8;

/// One query result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist: f64,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Immutable kd-tree over the coordinates of one cloud.
///
/// Results are exact: kNN returns the `k` smallest `(distance, index)` pairs and
/// radius queries use a closed ball (`d <= r`).
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl SpatialIndex {
    pub fn build(points: &[Point3]) -> Result<Self, CloudError> {
        if points.is_empty() {
            return Err(CloudError::Empty);
        }
        let mut index = SpatialIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, points.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for d in 0..3 {
                lo[d] = lo[d].min(self.points[i][d]);
                hi[d] = hi[d].max(self.points[i][d]);
            }
        }
        let dim = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[dim] - lo[dim] == 0.0 {
            // all coincident
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// The `k` nearest points, ascending by distance then index.
    pub fn knn(&self, query: &Point3, k: usize) -> Result<Vec<Neighbor>, CloudError> {
        if k > self.len() {
            return Err(CloudError::KTooLarge { k, n: self.len() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, query, k, &mut heap);
        let mut out: Vec<_> = heap
            .into_iter()
            .map(|HeapItem(d2, index)| (d2, index))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(out
            .into_iter()
            .map(|(d2, index)| Neighbor { index, dist: d2.sqrt() })
            .collect())
    }

    fn knn_node(&self, node: usize, q: &Point3, k: usize, heap: &mut BinaryHeap<HeapItem>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let item = HeapItem(dist2(q, &self.points[i]), i);
                    if heap.len() < k {
                        heap.push(item);
                    } else if item < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(item);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, q, k, heap);
                // equal-distance points on the far side may still win on index
                if heap.len() < k || diff * diff <= heap.peek().unwrap().0 {
                    self.knn_node(far, q, k, heap);
                }
            }
        }
    }

    /// Indices of all points within the closed ball, ascending by index.
    pub fn radius_sphere(&self, center: &Point3, r: f64) -> Result<Vec<usize>, CloudError> {
        let mut out = self.within(center, r, false)?;
        out.sort_unstable();
        Ok(out)
    }

    /// Indices of all points in the infinite vertical cylinder, ascending by index.
    pub fn radius_cylinder(&self, center: &Point3, r: f64) -> Result<Vec<usize>, CloudError> {
        let mut out = self.within(center, r, true)?;
        out.sort_unstable();
        Ok(out)
    }

    /// Points within the closed ball, ascending by distance then index.
    pub fn radius_neighbors(&self, center: &Point3, r: f64) -> Result<Vec<Neighbor>, CloudError> {
        let idx = self.within(center, r, false)?;
        let mut out: Vec<(f64, usize)> =
            idx.into_iter().map(|i| (dist2(center, &self.points[i]), i)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(out.into_iter().map(|(d2, index)| Neighbor { index, dist: d2.sqrt() }).collect())
    }

    /// Number of points in the closed ball.
    pub fn count_sphere(&self, center: &Point3, r: f64) -> Result<usize, CloudError> {
        Ok(self.within(center, r, false)?.len())
    }

    /// Number of points in the vertical cylinder.
    pub fn count_cylinder(&self, center: &Point3, r: f64) -> Result<usize, CloudError> {
        Ok(self.within(center, r, true)?.len())
    }

    fn within(&self, center: &Point3, r: f64, vertical: bool) -> Result<Vec<usize>, CloudError> {
        if !(r > 0.0) {
            return Err(CloudError::BadRadius(r));
        }
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        let r2 = r * r;
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d2 = if vertical {
                            dist2_xy(center, &self.points[i])
                        } else {
                            dist2(center, &self.points[i])
                        };
                        if d2 <= r2 {
                            out.push(i);
                        }
                    }
                }
                Node::Split { dim, value, left, right } => {
                    if vertical && dim == 2 {
                        stack.push(left);
                        stack.push(right);
                        continue;
                    }
                    let diff = center[dim] - value;
                    // left holds coords <= value, right holds coords >= value
                    if diff <= r {
                        stack.push(left);
                    }
                    if diff >= -r {
                        stack.push(right);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &[Point3], q: &Point3, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> =
            points.iter().enumerate().map(|(i, p)| (dist2(q, p), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|x| x.1).collect()
    }

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..3.0)])
            .collect()
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(matches!(SpatialIndex::build(&[]), Err(CloudError::Empty)));
    }

    #[test]
    fn collinear_self_query() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let idx = SpatialIndex::build(&pts).unwrap();
        let nn = idx.knn(&pts[0], 1).unwrap();
        assert_eq!(nn, vec![Neighbor { index: 0, dist: 0.0 }]);
    }

    #[test]
    fn duplicates_ordered_by_index() {
        let pts = [[5.0, 5.0, 5.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [3.0, 0.0, 0.0]];
        let idx = SpatialIndex::build(&pts).unwrap();
        let nn = idx.knn(&[1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn unit_grid_five_nearest() {
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        let idx = SpatialIndex::build(&pts).unwrap();
        let q = [2.0, 2.0, 2.0];
        let nn = idx.knn(&q, 7).unwrap();
        assert_eq!(nn[0].dist, 0.0);
        assert!(nn[1..].iter().all(|n| n.dist == 1.0));
        // k = 5: ties among the six axis neighbours resolved by index
        let nn5 = idx.knn(&q, 5).unwrap();
        assert_eq!(nn5.iter().map(|n| n.index).collect::<Vec<_>>(), brute_knn(&pts, &q, 5));
    }

    #[test]
    fn knn_exhaustive_and_oversized() {
        let pts = random_points(40, 3);
        let idx = SpatialIndex::build(&pts).unwrap();
        let q = [5.0, 5.0, 1.0];
        let all = idx.knn(&q, 40).unwrap();
        assert_eq!(all.iter().map(|n| n.index).collect::<Vec<_>>(), brute_knn(&pts, &q, 40));
        assert!(matches!(idx.knn(&q, 41), Err(CloudError::KTooLarge { .. })));
    }

    #[test]
    fn radius_edge_cases() {
        let pts = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 50.0]];
        let idx = SpatialIndex::build(&pts).unwrap();
        assert!(idx.radius_sphere(&[100.0, 100.0, 0.0], 1.0).unwrap().is_empty());
        assert_eq!(idx.radius_sphere(&[0.0, 0.0, 0.0], 2.0).unwrap(), vec![0, 1]);
        assert_eq!(idx.radius_cylinder(&[0.0, 0.0, 0.0], 1.0).unwrap(), vec![0, 2]);
        assert!(matches!(idx.radius_sphere(&[0.0; 3], 0.0), Err(CloudError::BadRadius(_))));
        assert!(matches!(idx.radius_cylinder(&[0.0; 3], -1.0), Err(CloudError::BadRadius(_))));
    }

    #[test]
    fn tower_inside_cylinder() {
        let mut pts: Vec<Point3> = (0..20).map(|z| [0.1, -0.1, z as f64 * 3.0]).collect();
        pts.push([5.0, 0.0, 0.0]);
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.radius_cylinder(&[0.0; 3], 1.0).unwrap(), (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn plane_disc_same_for_sphere_and_cylinder() {
        let mut pts = Vec::new();
        for x in -10..=10 {
            for y in -10..=10 {
                pts.push([x as f64 * 0.5, y as f64 * 0.5, 1.0]);
            }
        }
        let idx = SpatialIndex::build(&pts).unwrap();
        let c = [0.25, 0.0, 1.0];
        assert_eq!(idx.radius_sphere(&c, 2.0).unwrap(), idx.radius_cylinder(&c, 2.0).unwrap());
    }
}
