//! Finite-difference checks over every layer type and every architecture, on
//! small random pairs.

use super::{nearest_point_difference, Architecture, NetConfig, NetError, NetworkGraph, PairBatch, PreparedPair};
use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Matrix, Tape, Tensor, TensorError};
use crate::cloud::{CylinderPair, PointCloud};
use crate::exec::Execution;
use crate::kpconv::{nearest_upsample, BatchNorm, Context, KpConvBlock, Mode, ParamStore, StagePlan, Unary};
use crate::{EpochTag, N_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;

/// Points per cloud in the suite's pairs.
pub const SUITE_POINTS: usize = 30;

/// Pass bound on the max relative error.
pub const SUITE_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradCase {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

impl GradCase {
    fn new(name: impl Into<String>, r: GradCheckReport) -> Self {
        Self { name: name.into(), max_rel_error: r.max_rel_error, checked: r.checked, passed: r.max_rel_error < SUITE_TOL }
    }
}

/// A larger step than the default keeps roundoff well under the bound for
/// losses summed over a whole cloud.
pub fn suite_options() -> GradCheckOptions {
    GradCheckOptions { eps: 1e-5, tol: SUITE_TOL, floor: 1e-5 }
}

pub fn suite_plan() -> StagePlan {
    StagePlan { dl0: 0.5, widths: vec![4, 8], kernel_points: 15, max_neighbors: 16 }
}

fn random_cloud(rng: &mut ChaCha8Rng, epoch: EpochTag) -> PointCloud {
    let points = (0..SUITE_POINTS)
        .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..1.5)])
        .collect();
    let labels = (0..SUITE_POINTS).map(|_| rng.random_range(0..N_CLASSES as u8)).collect();
    PointCloud::new(points, epoch).with_labels(labels)
}

/// A random labelled pair of `SUITE_POINTS`-point clouds.
pub fn suite_pair(seed: u64) -> CylinderPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sub1 = random_cloud(&mut rng, EpochTag::Pc1);
    let sub2 = random_cloud(&mut rng, EpochTag::Pc2);
    CylinderPair { sub1, sub2, center_xy: [0.0, 0.0], radius: 3.0 }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix { rows, cols, data: (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect() }
}

fn untensor(e: NetError) -> TensorError {
    match e {
        NetError::Tensor(t) => t,
        other => panic!("unexpected network error in gradient check: {other}"),
    }
}

/// `sum(y * probe)` with a fixed random probe, so no output symmetry can
/// cancel the gradient.
fn probe_loss(tape: &mut Tape, y: Tensor, probe: &Matrix) -> Result<Tensor, TensorError> {
    let p = tape.constant(probe.clone());
    let prod = tape.mul(y, p)?;
    Ok(tape.sum(prod))
}

/// Checks a layer whose parameters live in `store`; the last input is the
/// layer's feature input.
fn layer_case<F>(name: &str, store: &ParamStore, x: Matrix, probe: Matrix, f: F) -> Result<GradCase, TensorError>
where
    F: Fn(&mut Context, Tensor) -> Result<Tensor, TensorError>,
{
    let mut inputs = store.values.clone();
    inputs.push(x);
    let n = store.len();
    let r = grad_check(
        |t, leaves| {
            let mut ctx = Context::with_params(t, store, Mode::Train, &leaves[..n]);
            let y = f(&mut ctx, leaves[n])?;
            probe_loss(ctx.tape, y, &probe)
        },
        &inputs,
        suite_options(),
    )?;
    Ok(GradCase::new(name, r))
}

/// Every layer type in isolation.
pub fn layer_cases(seed: u64) -> Result<Vec<GradCase>, NetError> {
    let plan = suite_plan();
    let prepared = PreparedPair::new(&suite_pair(seed), &plan, &[], Execution::Sequential)?;
    let pyr = &prepared.pyramids[1];
    let (n0, n1) = (pyr.points[0].len(), pyr.points[1].len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut cases = Vec::new();

    let mut store = ParamStore::new();
    let block = KpConvBlock::new(&mut store, "conv", plan.kernel_points, 3, 4, &mut rng);
    let map = pyr.conv[0].clone();
    let (x, probe) = (random_matrix(&mut rng, n0, 3), random_matrix(&mut rng, n0, 4));
    cases.push(layer_case("kpconv", &store, x, probe, |ctx, x| block.forward(ctx, x, &map))?);

    let mut store = ParamStore::new();
    let block = KpConvBlock::new(&mut store, "strided", plan.kernel_points, 3, 4, &mut rng);
    let map = pyr.conv[1].clone();
    let (x, probe) = (random_matrix(&mut rng, n0, 3), random_matrix(&mut rng, n1, 4));
    cases.push(layer_case("strided_kpconv", &store, x, probe, |ctx, x| block.forward(ctx, x, &map))?);

    let store = ParamStore::new();
    let up: Arc<[usize]> = prepared.upsample[0].clone().into();
    let (x, probe) = (random_matrix(&mut rng, n1, 3), random_matrix(&mut rng, n0, 3));
    cases.push(layer_case("nearest_upsample", &store, x, probe, |ctx, x| nearest_upsample(ctx.tape, x, &up))?);

    let mut store = ParamStore::new();
    let unary = Unary::new(&mut store, "unary", 3, 5, false, &mut rng);
    let (x, probe) = (random_matrix(&mut rng, n0, 3), random_matrix(&mut rng, n0, 5));
    cases.push(layer_case("unary", &store, x, probe, |ctx, x| unary.forward(ctx, x))?);

    let mut store = ParamStore::new();
    let norm = BatchNorm::new(&mut store, "norm", 3);
    // move gamma and beta off their identity initialization
    store.values[0] = random_matrix(&mut rng, 1, 3);
    store.values[1] = random_matrix(&mut rng, 1, 3);
    let (x, probe) = (random_matrix(&mut rng, n0, 3), random_matrix(&mut rng, n0, 3));
    cases.push(layer_case("batch_norm", &store, x, probe, |ctx, x| norm.forward(ctx, x))?);

    let cross: Arc<[usize]> = prepared.cross[0].clone().into();
    let n_pc1 = prepared.pyramids[0].points[0].len();
    let inputs = [random_matrix(&mut rng, n_pc1, 3), random_matrix(&mut rng, n0, 3)];
    let probe = random_matrix(&mut rng, n0, 3);
    let r = grad_check(
        |t, v| {
            let d = nearest_point_difference(t, v[0], v[1], &cross)?;
            probe_loss(t, d, &probe)
        },
        &inputs,
        suite_options(),
    )?;
    cases.push(GradCase::new("fusion_difference", r));
    Ok(cases)
}

/// The whole network under the weighted NLL loss, over all parameters.
pub fn end_to_end_case(architecture: Architecture, seed: u64) -> Result<GradCase, NetError> {
    let cfg = NetConfig::new(architecture, suite_plan());
    let (batch, _) = PairBatch::from_pairs(&[suite_pair(seed)], &cfg.plan, &cfg.feature_channels, Execution::Sequential)?;
    let net = NetworkGraph::build(cfg, seed)?;
    let labels = batch.labels.clone().ok_or(NetError::EmptyBatch)?;
    let weights: Arc<[f64]> = vec![1.0; N_CLASSES].into();
    let r = grad_check(
        |t, leaves| {
            let mut ctx = Context::with_params(t, &net.store, Mode::Train, leaves);
            let logp = net.forward(&mut ctx, &batch).map_err(untensor)?;
            ctx.tape.nll_loss(logp, labels.clone(), weights.clone())
        },
        &net.store.values,
        suite_options(),
    )?;
    Ok(GradCase::new(format!("end_to_end/{architecture}"), r))
}

/// Layer cases followed by end-to-end cases for `architectures`.
pub fn gradient_suite(architectures: &[Architecture], seed: u64) -> Result<Vec<GradCase>, NetError> {
    let mut cases = layer_cases(seed)?;
    for &a in architectures {
        cases.push(end_to_end_case(a, seed)?);
    }
    Ok(cases)
}
