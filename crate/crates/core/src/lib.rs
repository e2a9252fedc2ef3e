//! Binary neural network training and deployment core.
//!
//! - [`tensor`]: dense `f32` tensors, seeded initializers, convolution primitives.
//! - [`binops`]: `sign`, straight-through and polynomial estimators, binary conv.
//! - [`network`]: binarized conv blocks, fixed architectures, hand-written backward.
//! - [`optim`]: the OvSW optimizer (adaptive gradient scaling plus silence-aware
//!   decay) and the SGD / LARS baselines.
//! - [`fliptrack`]: weight-sign flip statistics and CSV export.
//! - [`bitpack`]: XNOR-popcount inference engine and packed model container.

pub mod binops;
pub mod bitpack;
pub mod container;
pub mod error;
pub mod fliptrack;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Rng, Tensor};
