use super::NetError;
use crate::autodiff::{KernelMap, Matrix};
use crate::cloud::{grid_subsample, CylinderPair, PointCloud, SpatialIndex};
use crate::exec::{self, Execution};
use crate::kpconv::{influence_map, nearest_map, neighbor_lists, StagePlan};
use crate::Point3;
use std::sync::Arc;

/// Per-epoch pyramid: subsampled points and the convolution map of every stage.
///
/// Stage 0 convolves `P0 -> P0` at radius `rho_0`; stage `i > 0` is strided,
/// querying `P_i` from supports `P_{i-1}` at the finer radius `rho_{i-1}`.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub points: Vec<Vec<Point3>>,
    pub conv: Vec<Arc<KernelMap>>,
}

impl Pyramid {
    pub fn build(base: &PointCloud, plan: &StagePlan, exec: Execution) -> Result<(Self, PointCloud), NetError> {
        let mut clouds = vec![grid_subsample(base, plan.dl(0))?];
        for i in 1..plan.stages() {
            let next = grid_subsample(&clouds[i - 1], plan.dl(i))?;
            clouds.push(next);
        }
        let points: Vec<Vec<Point3>> = clouds.iter().map(|c| c.points.clone()).collect();
        let mut conv = Vec::with_capacity(points.len());
        for i in 0..points.len() {
            let (supports, radius) = if i == 0 { (&points[0], plan.conv_radius(0)) } else { (&points[i - 1], plan.conv_radius(i - 1)) };
            let index = SpatialIndex::build(supports)?;
            let lists = neighbor_lists(&points[i], &index, radius, plan.max_neighbors, exec)?;
            let kernel = crate::kpconv::kernel_disposition(plan.kernel_points, radius);
            conv.push(Arc::new(influence_map(&points[i], supports, &lists, &kernel, exec)));
        }
        let first = clouds.swap_remove(0);
        Ok((Self { points, conv }, first))
    }

    pub fn stages(&self) -> usize {
        self.points.len()
    }

    /// Number of queries without any support in range, summed over stages.
    pub fn empty_neighborhoods(&self) -> usize {
        self.conv.iter().map(|m| m.empty_rows()).sum()
    }
}

/// One cylinder pair preprocessed for a stage plan.
#[derive(Clone, Debug)]
pub struct PreparedPair {
    pub pyramids: [Pyramid; 2],
    /// Stage-0 input features per epoch: constant 1 followed by selected channels.
    pub inputs: [Matrix; 2],
    /// PC2 stage `i` point -> nearest PC1 stage `i` point.
    pub cross: Vec<Vec<usize>>,
    /// PC2 stage `i` point -> nearest PC2 stage `i + 1` point.
    pub upsample: Vec<Vec<usize>>,
    /// Stage-0 PC2 labels, if the pair is labeled.
    pub labels: Option<Vec<u8>>,
    /// Original PC2 point -> nearest stage-0 PC2 point.
    pub projection: Vec<usize>,
    pub dl0: f64,
}

/// Nearest PC1 point for every PC2 point.
pub fn cross_map(p1: &[Point3], p2: &[Point3], exec: Execution) -> Result<Vec<usize>, NetError> {
    if p1.is_empty() {
        return Err(NetError::EmptyCloud);
    }
    let index = SpatialIndex::build(p1)?;
    Ok(nearest_map(p2, &index, exec)?)
}

fn input_matrix(cloud: &PointCloud, channels: &[usize]) -> Result<Matrix, NetError> {
    let n = cloud.len();
    let width = 1 + channels.len();
    let mut m = Matrix::filled(n, width, 1.0);
    if channels.is_empty() {
        return Ok(m);
    }
    let feats = cloud.features.as_ref().ok_or(NetError::MissingFeatures)?;
    if let Some(&bad) = channels.iter().find(|&&c| c >= feats.channels) {
        return Err(NetError::Config(format!("input channel {bad} not present (cloud has {})", feats.channels)));
    }
    for i in 0..n {
        let row = feats.row(i);
        for (j, &c) in channels.iter().enumerate() {
            m.set(i, j + 1, row[c]);
        }
    }
    Ok(m)
}

impl PreparedPair {
    pub fn new(pair: &CylinderPair, plan: &StagePlan, channels: &[usize], exec: Execution) -> Result<Self, NetError> {
        plan.validate().map_err(NetError::Config)?;
        if pair.sub1.is_empty() || pair.sub2.is_empty() {
            return Err(NetError::EmptyCloud);
        }
        let (pyr1, base1) = Pyramid::build(&pair.sub1, plan, exec)?;
        let (pyr2, base2) = Pyramid::build(&pair.sub2, plan, exec)?;
        let cross = (0..plan.stages())
            .map(|i| cross_map(&pyr1.points[i], &pyr2.points[i], exec))
            .collect::<Result<Vec<_>, _>>()?;
        let upsample = (0..plan.stages().saturating_sub(1))
            .map(|i| {
                let coarse = SpatialIndex::build(&pyr2.points[i + 1])?;
                Ok(nearest_map(&pyr2.points[i], &coarse, exec)?)
            })
            .collect::<Result<Vec<_>, NetError>>()?;
        let projection = nearest_map(&pair.sub2.points, &SpatialIndex::build(&pyr2.points[0])?, exec)?;
        Ok(Self {
            inputs: [input_matrix(&base1, channels)?, input_matrix(&base2, channels)?],
            labels: base2.labels.clone(),
            pyramids: [pyr1, pyr2],
            cross,
            upsample,
            projection,
            dl0: plan.dl0,
        })
    }

    pub fn stages(&self) -> usize {
        self.cross.len()
    }

    pub fn n2(&self) -> usize {
        self.pyramids[1].points[0].len()
    }
}

/// Several prepared pairs stacked into block-diagonal maps.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub conv: [Vec<Arc<KernelMap>>; 2],
    pub inputs: [Matrix; 2],
    pub cross: Vec<Arc<[usize]>>,
    pub upsample: Vec<Arc<[usize]>>,
    pub labels: Option<Arc<[usize]>>,
    /// Start row of each pair in the stage-0 PC2 block, plus the total.
    pub offsets: Vec<usize>,
    pub dl0: f64,
}

fn stack_rows(mats: &[&Matrix]) -> Matrix {
    let cols = mats.first().map_or(0, |m| m.cols);
    let mut data = Vec::new();
    for m in mats {
        data.extend_from_slice(&m.data);
    }
    Matrix { rows: mats.iter().map(|m| m.rows).sum(), cols, data }
}

fn stack_index(parts: &[(&[usize], usize)]) -> Arc<[usize]> {
    parts.iter().flat_map(|(idx, off)| idx.iter().map(move |i| i + off)).collect()
}

impl PairBatch {
    pub fn collate(pairs: &[PreparedPair]) -> Result<Self, NetError> {
        let first = pairs.first().ok_or(NetError::EmptyBatch)?;
        let stages = first.stages();
        if let Some(p) = pairs.iter().find(|p| p.stages() != stages || p.dl0 != first.dl0) {
            return Err(NetError::StageMismatch { expected: stages, got: p.stages() });
        }
        let len = |p: &PreparedPair, e: usize, s: usize| p.pyramids[e].points[s].len();
        let offsets_of = |e: usize, s: usize| -> Vec<usize> {
            let mut acc = 0;
            pairs.iter().map(|p| {
                let o = acc;
                acc += len(p, e, s);
                o
            }).collect()
        };
        let conv = [0, 1].map(|e| {
            (0..stages)
                .map(|s| {
                    let maps: Vec<&KernelMap> = pairs.iter().map(|p| p.pyramids[e].conv[s].as_ref()).collect();
                    Arc::new(KernelMap::stack(&maps))
                })
                .collect()
        });
        let cross = (0..stages)
            .map(|s| {
                let off1 = offsets_of(0, s);
                let parts: Vec<_> = pairs.iter().zip(&off1).map(|(p, &o)| (p.cross[s].as_slice(), o)).collect();
                stack_index(&parts)
            })
            .collect();
        let upsample = (0..stages.saturating_sub(1))
            .map(|s| {
                let off = offsets_of(1, s + 1);
                let parts: Vec<_> = pairs.iter().zip(&off).map(|(p, &o)| (p.upsample[s].as_slice(), o)).collect();
                stack_index(&parts)
            })
            .collect();
        let labels = if pairs.iter().all(|p| p.labels.is_some()) {
            Some(pairs.iter().flat_map(|p| p.labels.as_ref().unwrap().iter().map(|&l| l as usize)).collect())
        } else {
            None
        };
        let mut offsets = offsets_of(1, 0);
        offsets.push(pairs.iter().map(|p| p.n2()).sum());
        Ok(Self {
            conv,
            inputs: [0, 1].map(|e| stack_rows(&pairs.iter().map(|p| &p.inputs[e]).collect::<Vec<_>>())),
            cross,
            upsample,
            labels,
            offsets,
            dl0: first.dl0,
        })
    }

    /// Prepares and stacks raw pairs, preprocessing pairs concurrently.
    pub fn from_pairs(
        pairs: &[CylinderPair],
        plan: &StagePlan,
        channels: &[usize],
        exec: Execution,
    ) -> Result<(Self, Vec<PreparedPair>), NetError> {
        let prepared = exec::map_slice(exec, pairs, |p| PreparedPair::new(p, plan, channels, Execution::Sequential))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        Ok((Self::collate(&prepared)?, prepared))
    }

    pub fn stages(&self) -> usize {
        self.cross.len()
    }

    pub fn n2(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn input_channels(&self) -> usize {
        self.inputs[1].cols
    }
}
