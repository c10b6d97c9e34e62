//! Dense 2D reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every value computed during one forward pass; [`Tensor`] is a
//! copyable handle into it. Operations append nodes in topological order and
//! [`Tape::backward`] walks them in reverse exactly once.

mod gradcheck;
mod matrix;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use matrix::Matrix;
pub use sparse::KernelMap;
pub use tape::{BatchStats, Gradients, Tape, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("backward already ran on this tape")]
    AlreadyBackward,
    #[error("function is not deterministic: two evaluations differ")]
    NonDeterministic,
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
}
