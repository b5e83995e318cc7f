//! Minimal static-graph neural network runtime: layer ops with reverse-mode
//! gradients over NCHW tensors, Adam, and binary cross-entropy. Supports the
//! forward pass, parameter gradients for training, and node gradients for
//! input-space and feature-map attribution.

mod adam;
mod graph;
mod kernels;
mod loss;

pub use adam::Adam;
pub use graph::{Grads, Graph, GraphBuilder, Init, NodeId, Op, Param, ParamId, Tape};
pub use loss::{bce_with_logits, sigmoid};
