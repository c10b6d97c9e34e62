//! Change-segmentation networks built from a shared KPConv stack and the
//! nearest-point feature difference.

mod batch;
mod gradsuite;
mod graph;

pub use batch::{cross_map, PairBatch, PreparedPair, Pyramid};
pub use gradsuite::{end_to_end_case, gradient_suite, layer_cases, suite_pair, suite_plan, GradCase, SUITE_POINTS, SUITE_TOL};
pub use graph::{Encoder, EncoderStage, FusionEdge, LayerKind, LayerSpec, NetworkGraph, Stream};

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::cloud::CloudError;
use crate::kpconv::StagePlan;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("batch has {got} stages, network expects {expected}")]
    StageMismatch { expected: usize, got: usize },
    #[error("batch input has {got} channels, network expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("cannot build a nearest-point map from an empty cloud")]
    EmptyCloud,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("input features requested but the cloud carries none")]
    MissingFeatures,
    #[error("invalid network configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Siamese,
    OneConvFusion,
    Triplet,
    EncoderFusion,
}

impl Architecture {
    pub const ALL: [Architecture; 4] =
        [Architecture::Siamese, Architecture::OneConvFusion, Architecture::Triplet, Architecture::EncoderFusion];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Siamese => "siamese",
            Architecture::OneConvFusion => "one_conv_fusion",
            Architecture::Triplet => "triplet",
            Architecture::EncoderFusion => "encoder_fusion",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown architecture `{s}` (expected siamese, one_conv_fusion, triplet or encoder_fusion)"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub architecture: Architecture,
    /// Honored by siamese and triplet.
    pub shared_weights: bool,
    pub plan: StagePlan,
    /// Hand-crafted channels appended after the constant-1 input.
    pub feature_channels: Vec<usize>,
    pub n_classes: usize,
}

impl NetConfig {
    pub fn new(architecture: Architecture, plan: StagePlan) -> Self {
        Self { architecture, shared_weights: true, plan, feature_channels: Vec::new(), n_classes: crate::N_CLASSES }
    }

    pub fn input_channels(&self) -> usize {
        1 + self.feature_channels.len()
    }
}

/// `out[i] = f2[i] - f1[map[i]]`, where `map` sends each PC2 point to its
/// nearest PC1 point at the same stage.
pub fn nearest_point_difference(tape: &mut Tape, f1: Tensor, f2: Tensor, map: &Arc<[usize]>) -> Result<Tensor, TensorError> {
    if f1.cols() != f2.cols() || map.len() != f2.rows() {
        return Err(TensorError::ShapeMismatch { op: "nearest_point_difference", left: f1.shape(), right: f2.shape() });
    }
    let gathered = tape.gather_rows(f1, map.clone())?;
    tape.sub(f2, gathered)
}
