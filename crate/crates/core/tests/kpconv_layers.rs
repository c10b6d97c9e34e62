use kpchange::autodiff::{grad_check, GradCheckOptions, KernelMap, Matrix, Tape};
use kpchange::cloud::SpatialIndex;
use kpchange::exec::Execution;
use kpchange::kpconv::{
    apply_stat_updates, influence_map, kernel_disposition, kpconv_forward, nearest_map, nearest_upsample,
    neighbor_lists, Context, KernelDisposition, KpConvBlock, Mode, ParamStore, Unary,
};
use kpchange::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn cloud(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), rng.random_range(0.0..2.0)]).collect()
}

fn feats(n: usize, c: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix { rows: n, cols: c, data: (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect() }
}

fn build_map(queries: &[Point3], supports: &[Point3], kernel: &KernelDisposition) -> KernelMap {
    let index = SpatialIndex::build(supports).unwrap();
    let lists = neighbor_lists(queries, &index, kernel.radius, 64, Execution::Sequential).unwrap();
    influence_map(queries, supports, &lists, kernel, Execution::Sequential)
}

/// Direct evaluation: brute-force neighbors, triple loop over neighbors, kernel
/// points and channels.
fn naive_kpconv(
    queries: &[Point3],
    supports: &[Point3],
    f: &Matrix,
    w: &Matrix,
    kernel: &KernelDisposition,
) -> Matrix {
    let cin = f.cols;
    let mut out = Matrix::zeros(queries.len(), w.cols);
    for (q, qp) in queries.iter().enumerate() {
        for (s, sp) in supports.iter().enumerate() {
            let rel = [sp[0] - qp[0], sp[1] - qp[1], sp[2] - qp[2]];
            if rel.iter().map(|v| v * v).sum::<f64>() > kernel.radius * kernel.radius {
                continue;
            }
            for (k, off) in kernel.offsets.iter().enumerate() {
                let d = ((rel[0] - off[0]).powi(2) + (rel[1] - off[1]).powi(2) + (rel[2] - off[2]).powi(2)).sqrt();
                let h = (1.0 - d / kernel.sigma).max(0.0);
                for c in 0..cin {
                    for o in 0..w.cols {
                        let v = out.get(q, o) + h * f.get(s, c) * w.get(k * cin + c, o);
                        out.set(q, o, v);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn kpconv_matches_direct_evaluation() {
    let supports = cloud(120, 1);
    let queries = cloud(30, 2);
    let kernel = kernel_disposition(15, 1.2);
    let f = feats(120, 3, 3);
    let w = feats(15 * 3, 5, 4);
    let map = Arc::new(build_map(&queries, &supports, &kernel));
    let mut tape = Tape::new();
    let ft = tape.constant(f.clone());
    let wt = tape.constant(w.clone());
    let out = kpconv_forward(&mut tape, ft, wt, &map).unwrap();
    let oracle = naive_kpconv(&queries, &supports, &f, &w, &kernel);
    assert!(tape.value(out).max_abs_diff(&oracle) <= 1e-12);
}

#[test]
fn kpconv_is_translation_equivariant() {
    let supports = cloud(80, 5);
    let shift = [10.5, -3.25, 7.0];
    let moved: Vec<Point3> = supports.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
    let kernel = kernel_disposition(15, 1.0);
    let a = build_map(&supports, &supports, &kernel);
    let b = build_map(&moved, &moved, &kernel);
    let f = feats(80, 2, 6);
    assert!(a.apply(&f).max_abs_diff(&b.apply(&f)) < 1e-9);
}

#[test]
fn zero_features_give_zero_output() {
    let pts = cloud(50, 7);
    let kernel = kernel_disposition(15, 1.0);
    let map = Arc::new(build_map(&pts, &pts, &kernel));
    let mut tape = Tape::new();
    let f = tape.constant(Matrix::zeros(50, 4));
    let w = tape.constant(feats(60, 3, 8));
    let out = kpconv_forward(&mut tape, f, w, &map).unwrap();
    assert!(tape.value(out).data.iter().all(|v| *v == 0.0));
}

#[test]
fn kpconv_rejects_bad_weight_shape() {
    let pts = cloud(10, 9);
    let map = Arc::new(build_map(&pts, &pts, &kernel_disposition(15, 1.0)));
    let mut tape = Tape::new();
    let f = tape.constant(Matrix::zeros(10, 4));
    let w = tape.constant(Matrix::zeros(59, 3));
    assert!(kpconv_forward(&mut tape, f, w, &map).is_err());
}

#[test]
fn kpconv_gradients_match_finite_differences() {
    let supports = cloud(40, 10);
    let queries = cloud(12, 11);
    let kernel = kernel_disposition(15, 1.5);
    let map = Arc::new(build_map(&queries, &supports, &kernel));
    let report = grad_check(
        |t, v| {
            let y = kpconv_forward(t, v[0], v[1], &map)?;
            let y2 = t.mul(y, y)?;
            Ok(t.sum(y2))
        },
        &[feats(40, 2, 12), feats(30, 3, 13)],
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn upsample_backward_is_adjoint_of_gather() {
    let coarse_pts = cloud(10, 14);
    let fine_pts = cloud(35, 15);
    let index = SpatialIndex::build(&coarse_pts).unwrap();
    let map: Arc<[usize]> = nearest_map(&fine_pts, &index, Execution::Sequential).unwrap().into();
    let x = feats(10, 3, 16);
    let g = feats(35, 3, 17);
    let mut tape = Tape::new();
    let xt = tape.variable(x.clone());
    let gt = tape.constant(g.clone());
    let up = nearest_upsample(&mut tape, xt, &map).unwrap();
    let prod = tape.mul(up, gt).unwrap();
    let loss = tape.sum(prod);
    let lhs = tape.value(loss).data[0];
    let grads = tape.backward(loss).unwrap();
    let gx = grads.get_or_zeros(xt);
    let rhs: f64 = gx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10);
}

#[test]
fn blocks_count_parameters_and_update_running_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let conv = KpConvBlock::new(&mut store, "conv", 15, 3, 8, &mut rng);
    let unary = Unary::new(&mut store, "u", 8, 4, false, &mut rng);
    let head = Unary::new(&mut store, "head", 4, 7, true, &mut rng);
    assert_eq!(conv.param_count(), 15 * 3 * 8 + 16);
    assert_eq!(unary.param_count(), 8 * 4 + 4 + 8);
    assert_eq!(head.param_count(), 4 * 7 + 7);
    assert_eq!(store.scalar_count(), conv.param_count() + unary.param_count() + head.param_count());

    let pts = cloud(30, 2);
    let map = Arc::new(build_map(&pts, &pts, &kernel_disposition(15, 1.5)));
    let mut tape = Tape::new();
    let updates = {
        let mut ctx = Context::new(&mut tape, &store, Mode::Train);
        let x = ctx.tape.constant(feats(30, 3, 3));
        let h = conv.forward(&mut ctx, x, &map).unwrap();
        let h = unary.forward(&mut ctx, h).unwrap();
        let out = head.forward(&mut ctx, h).unwrap();
        assert_eq!(out.shape(), (30, 7));
        std::mem::take(&mut ctx.stat_updates)
    };
    assert_eq!(updates.len(), 2);
    let before = store.buffers[0].clone();
    apply_stat_updates(&mut store, &updates);
    let after = &store.buffers[0];
    for c in 0..8 {
        let expected = 0.9 * before.mean[c] + 0.1 * updates[0].1.mean[c];
        assert!((after.mean[c] - expected).abs() < 1e-15);
    }
}

#[test]
fn eval_mode_uses_running_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let unary = Unary::new(&mut store, "u", 2, 2, false, &mut rng);
    let x = feats(6, 2, 4);
    let run = |store: &ParamStore, rows: Matrix| {
        let mut tape = Tape::new();
        let mut ctx = Context::new(&mut tape, store, Mode::Eval);
        let xt = ctx.tape.constant(rows);
        let y = unary.forward(&mut ctx, xt).unwrap();
        tape.value(y).clone()
    };
    let full = run(&store, x.clone());
    let mut first = Matrix::zeros(1, 2);
    first.row_mut(0).copy_from_slice(x.row(0));
    let single = run(&store, first);
    assert!((0..2).all(|c| (full.get(0, c) - single.get(0, c)).abs() < 1e-14));
}
