//! Forward/backward implementations of every layer the networks use.

mod batchnorm;
mod conv3;
mod linear;
mod matmul;
mod pool;

pub use batchnorm::{BatchNorm3, BnCache};
pub use conv3::{conv_out_extent, Conv3};
pub use linear::{log_softmax, log_softmax_backward, Linear};
pub use pool::{adaptive_avgpool, adaptive_avgpool_backward, AvgPool3, MaxPool3};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("channel mismatch: layer expects {expected}, input has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("kernel larger than (padded) input")]
    KernelTooLarge,
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("batch-norm statistic population must be >= 2 in train mode, got {0}")]
    DegeneratePopulation(usize),
    #[error("zero-size spatial extent")]
    EmptySpatial,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Batch-norm mode: train uses batch statistics and updates the running
/// averages, eval normalizes with the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
