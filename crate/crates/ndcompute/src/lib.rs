//! Minimal differentiable-computation core.
//!
//! Tensors are dense row-major `f64` buffers. A [`Graph`] records operators
//! as they are applied and replays them in reverse to fill the gradient
//! slots of a [`ParameterSet`]. Optimizers update parameters in place from
//! those gradients.
//!
//! The operator set is deliberately small: convolutions (NHWC, no dilation),
//! dense layers, pointwise nonlinearities, softmax/sparsemax over the last
//! axis, fused cross-entropy, and the handful of reductions the attention
//! model and actor-critic losses need. There is no broadcasting.

mod error;
pub mod kernels;
mod graph;
mod optim;
mod params;
mod tensor;
pub mod testing;

pub use error::{ComputeError, Result};
pub use graph::{Graph, OpKind, Var};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind};
pub use params::{ParamId, ParameterSet, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::Tensor;
