use super::trainer::{TrainError, Trainer};
use crate::cloud::{extract_cylinder_pair, in_cylinder, CloudError, PointCloud};
use crate::nets::PairBatch;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferParams {
    pub radius: f64,
    /// Center spacing as a fraction of the radius, at most `sqrt(2)`.
    pub spacing: f64,
    pub batch_size: usize,
}

/// Labels every PC2 point: centers on a square grid over the PC2 extent, each
/// point predicted from the cylinder of its grid cell.
pub fn predict_tile(trainer: &Trainer, pc1: &PointCloud, pc2: &PointCloud, params: InferParams) -> Result<Vec<u8>, TrainError> {
    if !(params.spacing > 0.0 && params.spacing <= std::f64::consts::SQRT_2) {
        return Err(TrainError::Net(crate::nets::NetError::Config(format!(
            "inference spacing must be in (0, sqrt 2], got {}",
            params.spacing
        ))));
    }
    let (lo, _) = pc2.bounds().ok_or(CloudError::Empty)?;
    let step = params.spacing * params.radius;
    let cell_of = |p: &[f64; 3]| (((p[0] - lo[0]) / step).floor() as i64, ((p[1] - lo[1]) / step).floor() as i64);
    let mut cells: Vec<(i64, i64)> = pc2.points.iter().map(cell_of).collect();
    cells.sort_unstable();
    cells.dedup();
    let owner: Vec<usize> = pc2.points.iter().map(|p| cells.binary_search(&cell_of(p)).unwrap()).collect();
    let centers: Vec<[f64; 2]> =
        cells.iter().map(|&(i, j)| [lo[0] + (i as f64 + 0.5) * step, lo[1] + (j as f64 + 0.5) * step]).collect();

    let mut out = vec![0u8; pc2.len()];
    let ids: Vec<usize> = (0..centers.len()).collect();
    for chunk in ids.chunks(params.batch_size.max(1)) {
        let mut pairs = Vec::with_capacity(chunk.len());
        let mut members = Vec::with_capacity(chunk.len());
        for &c in chunk {
            let mut radius = params.radius;
            let pair = loop {
                match extract_cylinder_pair(pc1, pc2, centers[c], radius) {
                    Err(CloudError::EmptyCrop(_)) if radius < 16.0 * params.radius => radius *= 2.0,
                    other => break other?,
                }
            };
            let idx: Vec<usize> = (0..pc2.len()).filter(|&i| in_cylinder(&pc2.points[i], centers[c], radius)).collect();
            members.push((c, idx));
            pairs.push(pair);
        }
        let prepared = trainer.prepare(pairs)?;
        let batch = PairBatch::collate(&prepared)?;
        let preds = trainer.predict(&batch)?;
        for (k, (c, idx)) in members.iter().enumerate() {
            let slice = &preds[batch.offsets[k]..batch.offsets[k + 1]];
            for (j, &i) in idx.iter().enumerate() {
                if owner[i] == *c {
                    out[i] = slice[prepared[k].projection[j]];
                }
            }
        }
    }
    Ok(out)
}
