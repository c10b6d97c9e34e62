//! Deterministic generator of paired, labelled urban scenes with scripted changes.

mod dataset;
mod sample;

pub use dataset::{
    generate_dataset, load_split, read_manifest, write_dataset, DatasetIoError, DatasetManifest, Split, SplitRatios, TileEntry,
    TileParams,
};
pub use sample::{
    generate_pair, LabeledPair, DEMOLITION, MISSING_VEGETATION, MOBILE_OBJECT, NEW_BUILDING, NEW_VEGETATION, UNCHANGED,
    VEGETATION_GROWTH,
};

use crate::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CAR_SIZE: [f64; 3] = [4.5, 1.8, 1.5];
/// Relative sampling density of vertical surfaces.
pub const WALL_DENSITY: f64 = 0.5;
/// Share of crown points drawn on the ellipsoid shell.
pub const CROWN_SHELL_SHARE: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("objects {0} and {1} overlap with conflicting change operations")]
    Conflict(usize, usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios([f64; 3]),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Roof {
    Flat,
    /// Ridge along the longer side, `rise` above the eaves.
    Gabled { rise: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObjectKind {
    Building { center: [f64; 2], size: [f64; 2], height: f64, roof: Roof },
    /// Crown ellipsoid radii `(rx, ry, rz)` sits on top of the trunk.
    Tree { center: [f64; 2], trunk_height: f64, trunk_radius: f64, crown: [f64; 3] },
    /// Car-sized box rotated by `heading` radians.
    Mobile { center: [f64; 2], heading: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum ChangeOp {
    Keep,
    Insert,
    Delete,
    /// Uniform crown and trunk scale-up.
    Grow { factor: f64 },
    Move { to: [f64; 2], heading: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub change: ChangeOp,
}

/// `z = base + amplitude * sin(2 pi x / wavelength + phase.0) * cos(2 pi y / wavelength + phase.1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundModel {
    pub base: f64,
    pub amplitude: f64,
    pub wavelength: f64,
    pub phase: [f64; 2],
}

impl GroundModel {
    pub fn flat(base: f64) -> Self {
        Self { base, amplitude: 0.0, wavelength: 100.0, phase: [0.0, 0.0] }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        if self.amplitude == 0.0 {
            return self.base;
        }
        let k = std::f64::consts::TAU / self.wavelength;
        self.base + self.amplitude * (k * x + self.phase[0]).sin() * (k * y + self.phase[1]).cos()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Tile covers `[0, extent.0] x [0, extent.1]`.
    pub extent: [f64; 2],
    pub ground: GroundModel,
    pub objects: Vec<SceneObject>,
    /// Points per square meter of horizontal surface.
    pub density: f64,
    pub noise_std: f64,
    pub seed: u64,
}

/// What an object looks like in one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Placed {
    Building { center: [f64; 2], size: [f64; 2], height: f64, roof: Roof },
    Tree { center: [f64; 2], trunk_height: f64, trunk_radius: f64, crown: [f64; 3] },
    Mobile { center: [f64; 2], heading: f64 },
}

impl SceneObject {
    /// Geometry in PC1 (`second = false`) or PC2, `None` when absent.
    pub(crate) fn placed(&self, second: bool) -> Option<Placed> {
        let base = match self.kind {
            ObjectKind::Building { center, size, height, roof } => Placed::Building { center, size, height, roof },
            ObjectKind::Tree { center, trunk_height, trunk_radius, crown } => {
                Placed::Tree { center, trunk_height, trunk_radius, crown }
            }
            ObjectKind::Mobile { center, heading } => Placed::Mobile { center, heading },
        };
        match (self.change, second) {
            (ChangeOp::Insert, false) | (ChangeOp::Delete, true) => None,
            (ChangeOp::Grow { factor }, true) => match base {
                Placed::Tree { center, trunk_height, trunk_radius, crown } => Some(Placed::Tree {
                    center,
                    trunk_height: trunk_height * factor,
                    trunk_radius,
                    crown: crown.map(|r| r * factor),
                }),
                other => Some(other),
            },
            (ChangeOp::Move { to, heading }, true) => match base {
                Placed::Mobile { .. } => Some(Placed::Mobile { center: to, heading }),
                other => Some(other),
            },
            _ => Some(base),
        }
    }
}

impl Placed {
    /// Axis-aligned xy bounding box `(min, max)`.
    pub(crate) fn footprint_box(&self) -> ([f64; 2], [f64; 2]) {
        let (c, h) = match *self {
            Placed::Building { center, size, .. } => (center, [size[0] / 2.0, size[1] / 2.0]),
            Placed::Tree { center, crown, trunk_radius, .. } => (center, [crown[0].max(trunk_radius), crown[1].max(trunk_radius)]),
            Placed::Mobile { center, heading } => {
                let (s, co) = heading.sin_cos();
                let (a, b) = (CAR_SIZE[0] / 2.0, CAR_SIZE[1] / 2.0);
                (center, [a * co.abs() + b * s.abs(), a * s.abs() + b * co.abs()])
            }
        };
        ([c[0] - h[0], c[1] - h[1]], [c[0] + h[0], c[1] + h[1]])
    }

    /// Whether `(x, y)` lies under the solid footprint (buildings and cars).
    pub(crate) fn covers_ground(&self, x: f64, y: f64) -> bool {
        match *self {
            Placed::Building { center, size, .. } => {
                (x - center[0]).abs() <= size[0] / 2.0 && (y - center[1]).abs() <= size[1] / 2.0
            }
            Placed::Mobile { center, heading } => {
                let (s, c) = heading.sin_cos();
                let (dx, dy) = (x - center[0], y - center[1]);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                u.abs() <= CAR_SIZE[0] / 2.0 && v.abs() <= CAR_SIZE[1] / 2.0
            }
            Placed::Tree { .. } => false,
        }
    }

    /// Whether `(x, y)` lies under the tree canopy.
    pub(crate) fn under_canopy(&self, x: f64, y: f64) -> bool {
        match *self {
            Placed::Tree { center, crown, .. } => {
                let (u, v) = ((x - center[0]) / crown[0], (y - center[1]) / crown[1]);
                u * u + v * v <= 1.0
            }
            _ => false,
        }
    }
}

fn boxes_overlap(a: ([f64; 2], [f64; 2]), b: ([f64; 2], [f64; 2])) -> bool {
    a.0[0] < b.1[0] && b.0[0] < a.1[0] && a.0[1] < b.1[1] && b.0[1] < a.1[1]
}

impl SceneSpec {
    /// Flat, empty scene.
    pub fn empty(extent: [f64; 2], seed: u64) -> Self {
        Self { extent, ground: GroundModel::flat(0.0), objects: Vec::new(), density: 0.5, noise_std: 0.05, seed }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) {
            return bad(format!("extent must be positive, got {:?}", self.extent));
        }
        if !(self.density > 0.0) || !self.density.is_finite() {
            return bad(format!("density must be positive, got {}", self.density));
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!("noise std must be non-negative, got {}", self.noise_std));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            match (obj.kind, obj.change) {
                (ObjectKind::Tree { .. }, ChangeOp::Grow { factor }) if factor > 1.0 => {}
                (_, ChangeOp::Grow { .. }) => return bad(format!("object {i}: only trees can grow, with factor > 1")),
                (ObjectKind::Mobile { .. }, ChangeOp::Move { .. }) => {}
                (_, ChangeOp::Move { .. }) => return bad(format!("object {i}: only mobile objects can move")),
                _ => {}
            }
            match obj.kind {
                ObjectKind::Building { size, height, roof, .. } => {
                    let rise_ok = match roof {
                        Roof::Flat => true,
                        Roof::Gabled { rise } => rise > 0.0,
                    };
                    if !(size[0] > 0.0 && size[1] > 0.0 && height > 0.0 && rise_ok) {
                        return bad(format!("object {i}: building dimensions must be positive"));
                    }
                }
                ObjectKind::Tree { trunk_height, trunk_radius, crown, .. } => {
                    if !(trunk_height > 0.0 && trunk_radius > 0.0 && crown.iter().all(|r| *r > 0.0)) {
                        return bad(format!("object {i}: tree dimensions must be positive"));
                    }
                }
                ObjectKind::Mobile { .. } => {}
            }
            for second in [false, true] {
                if let Some(p) = obj.placed(second) {
                    let (lo, hi) = p.footprint_box();
                    if lo[0] < 0.0 || lo[1] < 0.0 || hi[0] > self.extent[0] || hi[1] > self.extent[1] {
                        return bad(format!("object {i} leaves the tile extent"));
                    }
                }
            }
        }
        for i in 0..self.objects.len() {
            for j in i + 1..self.objects.len() {
                let (a, b) = (&self.objects[i], &self.objects[j]);
                if a.change == b.change {
                    continue;
                }
                let hit = [false, true].iter().any(|&sa| {
                    [false, true].iter().any(|&sb| match (a.placed(sa), b.placed(sb)) {
                        (Some(pa), Some(pb)) => boxes_overlap(pa.footprint_box(), pb.footprint_box()),
                        _ => false,
                    })
                });
                if hit {
                    return Err(SynthError::Conflict(i, j));
                }
            }
        }
        Ok(())
    }

    /// A tile laid out on a jittered grid of cells, with every change type present.
    pub fn random(extent: [f64; 2], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = 20.0;
        let nx = (extent[0] / cell).floor().max(1.0) as usize;
        let ny = (extent[1] / cell).floor().max(1.0) as usize;
        let (cw, ch) = (extent[0] / nx as f64, extent[1] / ny as f64);
        let mut cells: Vec<(usize, usize)> = (0..nx).flat_map(|i| (0..ny).map(move |j| (i, j))).collect();
        for i in (1..cells.len()).rev() {
            let j = rng.random_range(0..=i);
            cells.swap(i, j);
        }
        let mandatory = [
            (0u8, ChangeOp::Insert),
            (0, ChangeOp::Delete),
            (1, ChangeOp::Insert),
            (1, ChangeOp::Grow { factor: 0.0 }),
            (1, ChangeOp::Delete),
            (2, ChangeOp::Move { to: [0.0; 2], heading: 0.0 }),
            (2, ChangeOp::Insert),
        ];
        let mut objects = Vec::new();
        for (n, &(i, j)) in cells.iter().enumerate() {
            let origin = [i as f64 * cw, j as f64 * ch];
            let (kind, op) = if n < mandatory.len() {
                mandatory[n]
            } else {
                let kind = rng.random_range(0..3u8);
                let op = match rng.random_range(0..4u8) {
                    0 | 1 => ChangeOp::Keep,
                    _ => match kind {
                        0 => [ChangeOp::Insert, ChangeOp::Delete][rng.random_range(0..2)],
                        1 => [ChangeOp::Insert, ChangeOp::Delete, ChangeOp::Grow { factor: 0.0 }][rng.random_range(0..3)],
                        _ => [ChangeOp::Insert, ChangeOp::Delete, ChangeOp::Move { to: [0.0; 2], heading: 0.0 }]
                            [rng.random_range(0..3)],
                    },
                };
                (kind, op)
            };
            objects.push(random_object(&mut rng, origin, [cw, ch], kind, op));
            // a parked car alongside some buildings
            if kind == 0 && n >= mandatory.len() && rng.random_bool(0.3) {
                let c = [origin[0] + cw * 0.5, origin[1] + 2.0];
                objects.push(SceneObject { kind: ObjectKind::Mobile { center: c, heading: 0.0 }, change: op_for_side(op) });
            }
        }
        let ground = GroundModel {
            base: rng.random_range(0.0..5.0),
            amplitude: rng.random_range(0.2..1.0),
            wavelength: rng.random_range(60.0..150.0),
            phase: [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)],
        };
        Self { extent, ground, objects, density: 0.5, noise_std: 0.05, seed }
    }

    pub fn centers(&self) -> Vec<Point3> {
        self.objects
            .iter()
            .map(|o| match o.kind {
                ObjectKind::Building { center, .. } | ObjectKind::Tree { center, .. } | ObjectKind::Mobile { center, .. } => {
                    [center[0], center[1], self.ground.height(center[0], center[1])]
                }
            })
            .collect()
    }
}

fn op_for_side(op: ChangeOp) -> ChangeOp {
    match op {
        ChangeOp::Insert => ChangeOp::Insert,
        ChangeOp::Delete => ChangeOp::Delete,
        _ => ChangeOp::Keep,
    }
}

fn random_object(rng: &mut ChaCha8Rng, origin: [f64; 2], cell: [f64; 2], kind: u8, op: ChangeOp) -> SceneObject {
    let margin = 6.0;
    let mid = [origin[0] + cell[0] / 2.0, origin[1] + cell[1] / 2.0];
    let jitter = |rng: &mut ChaCha8Rng, room: f64| rng.random_range(-room..=room);
    match kind {
        0 => {
            let size = [rng.random_range(6.0..(cell[0] - margin - 2.0).max(6.5)), rng.random_range(6.0..(cell[1] - margin - 4.0).max(6.5))];
            let room = [((cell[0] - size[0]) / 2.0 - 1.0).max(0.0), ((cell[1] - size[1]) / 2.0 - 1.0).max(0.0)];
            let center = [mid[0] + jitter(rng, room[0]), mid[1] + 1.5 + jitter(rng, (room[1] - 1.5).max(0.0))];
            let roof = if rng.random_bool(0.5) { Roof::Flat } else { Roof::Gabled { rise: rng.random_range(1.5..4.0) } };
            SceneObject { kind: ObjectKind::Building { center, size, height: rng.random_range(4.0..15.0), roof }, change: op }
        }
        1 => {
            let r = rng.random_range(1.5..3.0);
            let crown = [r, r * rng.random_range(0.85..1.15), r * rng.random_range(0.9..1.4)];
            let center = [mid[0] + jitter(rng, 2.0), mid[1] + jitter(rng, 2.0)];
            let change = match op {
                ChangeOp::Grow { .. } => ChangeOp::Grow { factor: rng.random_range(1.2..1.5) },
                other => other,
            };
            SceneObject {
                kind: ObjectKind::Tree { center, trunk_height: rng.random_range(2.0..4.0), trunk_radius: 0.2, crown },
                change,
            }
        }
        _ => {
            let heading = rng.random_range(0.0..std::f64::consts::PI);
            let center = [mid[0] + jitter(rng, 3.0), mid[1] - 3.0 + jitter(rng, 1.0)];
            let change = match op {
                ChangeOp::Move { .. } => ChangeOp::Move {
                    to: [center[0] + rng.random_range(-2.0..2.0), center[1] + rng.random_range(5.0..7.0)],
                    heading: rng.random_range(0.0..std::f64::consts::PI),
                },
                other => other,
            };
            SceneObject { kind: ObjectKind::Mobile { center, heading }, change }
        }
    }
}
