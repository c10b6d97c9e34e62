//! Kernel point convolution building blocks.

mod kernel;
mod layers;
mod neighbors;
mod params;

pub use kernel::{kernel_disposition, relax_template, KernelDisposition};
pub use layers::{
    apply_stat_updates, kpconv_forward, nearest_upsample, BatchNorm, KpConvBlock, Unary, BN_EPS, BN_MOMENTUM,
    LEAKY_SLOPE,
};
pub use neighbors::{influence_map, nearest_map, neighbor_lists};
pub use params::{BufferId, Context, DiffRecord, Mode, ParamId, ParamStore, RunningStats};

/// Per-stage geometry of an encoder: `dl_i = dl0 * 2^i`, conv radius `2.5 * dl_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub dl0: f64,
    pub widths: Vec<usize>,
    pub kernel_points: usize,
    pub max_neighbors: usize,
}

pub const RADIUS_FACTOR: f64 = 2.5;

impl StagePlan {
    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    pub fn dl(&self, stage: usize) -> f64 {
        self.dl0 * (1u64 << stage) as f64
    }

    pub fn conv_radius(&self, stage: usize) -> f64 {
        RADIUS_FACTOR * self.dl(stage)
    }

    pub fn kernel(&self, stage: usize) -> KernelDisposition {
        kernel_disposition(self.kernel_points, self.conv_radius(stage))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.dl0 > 0.0) {
            return Err(format!("dl0 must be positive, got {}", self.dl0));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err("stage widths must be non-empty and positive".into());
        }
        if self.kernel_points == 0 || self.max_neighbors == 0 {
            return Err("kernel_points and max_neighbors must be positive".into());
        }
        Ok(())
    }
}
