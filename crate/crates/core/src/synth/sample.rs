use super::{ChangeOp, ObjectKind, Placed, Roof, SceneSpec, SynthError, CAR_SIZE, CROWN_SHELL_SHARE, WALL_DENSITY};
use crate::{EpochTag, Point3, PointCloud};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

pub const UNCHANGED: u8 = 0;
pub const NEW_BUILDING: u8 = 1;
pub const DEMOLITION: u8 = 2;
pub const NEW_VEGETATION: u8 = 3;
pub const VEGETATION_GROWTH: u8 = 4;
pub const MISSING_VEGETATION: u8 = 5;
pub const MOBILE_OBJECT: u8 = 6;

/// Both epochs of a tile; labels live on PC2.
#[derive(Clone, Debug)]
pub struct LabeledPair {
    pub pc1: PointCloud,
    pub pc2: PointCloud,
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

/// Uniform point on a planar patch `origin + s * u + t * v` restricted to a
/// triangle when `triangle` is set.
fn patch(rng: &mut ChaCha8Rng, origin: Point3, u: Point3, v: Point3, triangle: bool) -> Point3 {
    let (mut s, mut t): (f64, f64) = (rng.random(), rng.random());
    if triangle && s + t > 1.0 {
        s = 1.0 - s;
        t = 1.0 - t;
    }
    [0, 1, 2].map(|a| origin[a] + s * u[a] + t * v[a])
}

struct Surface {
    area: f64,
    origin: Point3,
    u: Point3,
    v: Point3,
    triangle: bool,
}

fn rect(origin: Point3, u: Point3, v: Point3) -> Surface {
    let n = cross(u, v);
    Surface { area: norm(n), origin, u, v, triangle: false }
}

fn tri(origin: Point3, u: Point3, v: Point3) -> Surface {
    let n = cross(u, v);
    Surface { area: 0.5 * norm(n), origin, u, v, triangle: true }
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Side walls of an oriented box footprint, bottom at `z0`, height `h`.
fn walls(center: [f64; 2], half: [f64; 2], heading: f64, z0: f64, h: f64) -> Vec<Surface> {
    let (s, c) = heading.sin_cos();
    let ax = [c * half[0], s * half[0]];
    let ay = [-s * half[1], c * half[1]];
    let corner = |i: f64, j: f64| [center[0] + i * ax[0] + j * ay[0], center[1] + i * ax[1] + j * ay[1], z0];
    let corners = [corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)];
    (0..4)
        .map(|k| {
            let (a, b) = (corners[k], corners[(k + 1) % 4]);
            rect(a, [b[0] - a[0], b[1] - a[1], 0.0], [0.0, 0.0, h])
        })
        .collect()
}

/// Surface patches and their relative densities.
fn surfaces(p: &Placed, spec: &SceneSpec) -> Vec<(Surface, f64)> {
    let mut out = Vec::new();
    match *p {
        Placed::Building { center, size, height, roof } => {
            let g = spec.ground.height(center[0], center[1]);
            let half = [size[0] / 2.0, size[1] / 2.0];
            let top = g + height;
            let x0 = center[0] - half[0];
            let y0 = center[1] - half[1];
            for w in walls(center, half, 0.0, g, height) {
                out.push((w, WALL_DENSITY));
            }
            match roof {
                Roof::Flat => out.push((rect([x0, y0, top], [size[0], 0.0, 0.0], [0.0, size[1], 0.0]), 1.0)),
                Roof::Gabled { rise } => {
                    if size[0] >= size[1] {
                        // ridge along x at y = center
                        let ridge = [x0, center[1], top + rise];
                        out.push((rect(ridge, [size[0], 0.0, 0.0], [0.0, -half[1], -rise]), 1.0));
                        out.push((rect(ridge, [size[0], 0.0, 0.0], [0.0, half[1], -rise]), 1.0));
                        for x in [x0, x0 + size[0]] {
                            out.push((tri([x, y0, top], [0.0, size[1], 0.0], [0.0, half[1], rise]), WALL_DENSITY));
                        }
                    } else {
                        let ridge = [center[0], y0, top + rise];
                        out.push((rect(ridge, [0.0, size[1], 0.0], [-half[0], 0.0, -rise]), 1.0));
                        out.push((rect(ridge, [0.0, size[1], 0.0], [half[0], 0.0, -rise]), 1.0));
                        for y in [y0, y0 + size[1]] {
                            out.push((tri([x0, y, top], [size[0], 0.0, 0.0], [half[0], 0.0, rise]), WALL_DENSITY));
                        }
                    }
                }
            }
        }
        Placed::Mobile { center, heading } => {
            let g = spec.ground.height(center[0], center[1]);
            let half = [CAR_SIZE[0] / 2.0, CAR_SIZE[1] / 2.0];
            for w in walls(center, half, heading, g, CAR_SIZE[2]) {
                out.push((w, WALL_DENSITY));
            }
            let (s, c) = heading.sin_cos();
            let u = [c * CAR_SIZE[0], s * CAR_SIZE[0], 0.0];
            let v = [-s * CAR_SIZE[1], c * CAR_SIZE[1], 0.0];
            let origin = [center[0] - u[0] / 2.0 - v[0] / 2.0, center[1] - u[1] / 2.0 - v[1] / 2.0, g + CAR_SIZE[2]];
            out.push((rect(origin, u, v), 1.0));
        }
        Placed::Tree { .. } => {}
    }
    out
}

/// Thomsen's approximation of the ellipsoid surface area.
fn ellipsoid_area(r: [f64; 3]) -> f64 {
    let p = 1.6075;
    let (a, b, c) = (r[0].powf(p), r[1].powf(p), r[2].powf(p));
    4.0 * std::f64::consts::PI * ((a * b + a * c + b * c) / 3.0).powf(1.0 / p)
}

fn sample_object(rng: &mut ChaCha8Rng, p: &Placed, spec: &SceneSpec, out: &mut Vec<Point3>) {
    if let Placed::Tree { center, trunk_height, trunk_radius, crown } = *p {
        let g = spec.ground.height(center[0], center[1]);
        let trunk_area = std::f64::consts::TAU * trunk_radius * trunk_height;
        for _ in 0..poisson(rng, trunk_area * spec.density * WALL_DENSITY) {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let z: f64 = rng.random_range(0.0..trunk_height);
            out.push([center[0] + trunk_radius * a.cos(), center[1] + trunk_radius * a.sin(), g + z]);
        }
        let cz = g + trunk_height + crown[2];
        for _ in 0..poisson(rng, ellipsoid_area(crown) * spec.density) {
            let mut d: [f64; 3] = [0, 1, 2].map(|_| StandardNormal.sample(rng));
            let n = norm(d).max(1e-12);
            d.iter_mut().for_each(|v| *v /= n);
            let scale = if rng.random_bool(CROWN_SHELL_SHARE) { 1.0 } else { rng.random::<f64>().cbrt() };
            out.push([center[0] + scale * d[0] * crown[0], center[1] + scale * d[1] * crown[1], cz + scale * d[2] * crown[2]]);
        }
        return;
    }
    for (s, rel) in surfaces(p, spec) {
        for _ in 0..poisson(rng, s.area * spec.density * rel) {
            out.push(patch(rng, s.origin, s.u, s.v, s.triangle));
        }
    }
}

fn object_label(kind: &ObjectKind, op: ChangeOp) -> u8 {
    match op {
        ChangeOp::Keep | ChangeOp::Delete => UNCHANGED,
        ChangeOp::Grow { .. } => VEGETATION_GROWTH,
        ChangeOp::Move { .. } => MOBILE_OBJECT,
        ChangeOp::Insert => match kind {
            ObjectKind::Building { .. } => NEW_BUILDING,
            ObjectKind::Tree { .. } => NEW_VEGETATION,
            ObjectKind::Mobile { .. } => MOBILE_OBJECT,
        },
    }
}

fn sample_epoch(spec: &SceneSpec, second: bool) -> (Vec<Point3>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(if second { 2 } else { 1 });
    let placed: Vec<Option<Placed>> = spec.objects.iter().map(|o| o.placed(second)).collect();
    let removed: Vec<(Placed, &ObjectKind)> = spec
        .objects
        .iter()
        .filter(|o| o.change == ChangeOp::Delete)
        .filter_map(|o| o.placed(false).map(|p| (p, &o.kind)))
        .collect();

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let n_ground = poisson(&mut rng, spec.extent[0] * spec.extent[1] * spec.density);
    for _ in 0..n_ground {
        let x = rng.random_range(0.0..spec.extent[0]);
        let y = rng.random_range(0.0..spec.extent[1]);
        if placed.iter().flatten().any(|p| p.covers_ground(x, y)) {
            continue;
        }
        let label = removed
            .iter()
            .find_map(|(p, kind)| match kind {
                ObjectKind::Building { .. } if p.covers_ground(x, y) => Some(DEMOLITION),
                ObjectKind::Tree { .. } if p.under_canopy(x, y) => Some(MISSING_VEGETATION),
                _ => None,
            })
            .unwrap_or(UNCHANGED);
        points.push([x, y, spec.ground.height(x, y)]);
        labels.push(label);
    }
    for (obj, p) in spec.objects.iter().zip(&placed) {
        if let Some(p) = p {
            let before = points.len();
            sample_object(&mut rng, p, spec, &mut points);
            labels.resize(points.len(), object_label(&obj.kind, obj.change));
            debug_assert!(points.len() >= before);
        }
    }
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("validated noise std");
        for p in &mut points {
            for v in p.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    (points, labels)
}

/// Samples both epochs. Unchanged surfaces are resampled independently per epoch.
pub fn generate_pair(spec: &SceneSpec) -> Result<LabeledPair, SynthError> {
    spec.validate()?;
    let (p1, _) = sample_epoch(spec, false);
    let (p2, labels) = sample_epoch(spec, true);
    Ok(LabeledPair {
        pc1: PointCloud::new(p1, EpochTag::Pc1),
        pc2: PointCloud::new(p2, EpochTag::Pc2).with_labels(labels),
    })
}
