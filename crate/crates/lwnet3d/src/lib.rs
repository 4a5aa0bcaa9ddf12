//! 3-D lightweight convolutional networks for hyperspectral image
//! classification: a self-contained tensor engine with reverse-mode
//! gradients, the LW-unit and residual architectures, SGD training,
//! transfer via partial checkpoint restoration, and parameter/MAC
//! accounting.

pub mod checkpoint;
pub mod cli;
pub mod cost;
pub mod data;
pub mod graph;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use models::{build_model, Arch, ModelGraph};
pub use scalar::Scalar;
pub use tensor::{Extent3, Stride3, Tensor5};
