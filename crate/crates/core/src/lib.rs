//! Multi-class change segmentation between two epochs of a 3D point cloud.
//!
//! The crate is organised bottom-up:
//!
//! - [`cloud`]: point container, kd-tree index, grid subsampling, cylinder crops and PLY I/O
//! - [`features`]: the ten hand-crafted per-point descriptors, including the bi-temporal
//!   `Stability` ratio
//! - [`autodiff`]: a small dense reverse-mode tape
//! - [`kpconv`]: kernel point convolution layers on top of the tape
//! - [`nets`]: nearest-point feature difference and the four fusion architectures
//! - [`training`]: loss, SGD with momentum, class-balanced cylinder sampling, checkpoints
//! - [`metrics`]: confusion matrix, per-class IoU, mAcc and mIoU over change classes
//! - [`synth`]: a deterministic generator of labelled urban change scenes
//! - [`config`]: the run configuration shared by the command-line tools
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iteration otherwise.

pub mod autodiff;
pub mod cloud;
pub mod config;
pub mod exec;
pub mod features;
pub mod kpconv;
pub mod metrics;
pub mod nets;
pub mod synth;
pub mod training;
pub mod trend;

pub use cloud::{EpochTag, PointCloud};

/// Change classes, in label-id order.
pub const CLASS_NAMES: [&str; 7] = [
    "unchanged",
    "new building",
    "demolition",
    "new vegetation",
    "vegetation growth",
    "missing vegetation",
    "mobile object",
];

/// Number of change classes.
pub const N_CLASSES: usize = CLASS_NAMES.len();

/// A 3D point in meters.
pub type Point3 = [f64; 3];
