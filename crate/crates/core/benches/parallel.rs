//! Sequential versus rayon execution of the data-parallel hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kpchange::cloud::{extract_cylinder_pair, SpatialIndex};
use kpchange::exec::{self, Execution};
use kpchange::features::{cloud_features, FeatureParams};
use kpchange::kpconv::{influence_map, kernel_disposition, neighbor_lists};
use kpchange::nets::PairBatch;
use kpchange::synth::{generate_dataset, generate_pair, SceneSpec, SplitRatios, TileParams};
use kpchange::kpconv::StagePlan;
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

/// `cloud_features` reads the process-wide policy, so it is switched through
/// strict mode.
fn with_policy<T>(exec: Execution, f: impl FnOnce() -> T) -> T {
    exec::set_strict(exec == Execution::Sequential);
    let out = f();
    exec::set_strict(false);
    out
}

fn features(c: &mut Criterion) {
    let pair = generate_pair(&SceneSpec::random([100.0, 100.0], 1)).unwrap();
    let params = FeatureParams::default();
    let mut g = c.benchmark_group("features");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, pair.pc2.len()), |b| {
            b.iter(|| with_policy(exec, || black_box(cloud_features(&pair.pc2, &pair.pc1, &params).unwrap())))
        });
    }
    g.finish();
}

fn neighbor_maps(c: &mut Criterion) {
    let pair = generate_pair(&SceneSpec::random([100.0, 100.0], 2)).unwrap();
    let points = &pair.pc2.points;
    let index = SpatialIndex::build(points).unwrap();
    let kernel = kernel_disposition(15, 2.5);
    let mut g = c.benchmark_group("neighbor_maps");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, points.len()), |b| {
            b.iter(|| {
                let lists = neighbor_lists(points, &index, kernel.radius, 40, exec).unwrap();
                black_box(influence_map(points, points, &lists, &kernel, exec))
            })
        });
    }
    g.finish();
}

fn batch_prep(c: &mut Criterion) {
    let (_, tiles) = generate_dataset(2, SplitRatios::default(), 3, TileParams::default(), Execution::Parallel).unwrap();
    let pairs: Vec<_> = (0..8)
        .map(|i| {
            let t = &tiles[i % tiles.len()];
            let x = 20.0 + 8.0 * i as f64;
            extract_cylinder_pair(&t.pc1, &t.pc2, [x, 50.0], 20.0).unwrap()
        })
        .collect();
    let plan = StagePlan { dl0: 1.0, widths: vec![64, 128, 256, 512], kernel_points: 15, max_neighbors: 40 };
    let mut g = c.benchmark_group("batch_prep");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, pairs.len()), |b| {
            b.iter(|| black_box(PairBatch::from_pairs(&pairs, &plan, &[], exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, features, neighbor_maps, batch_prep);
criterion_main!(benches);
