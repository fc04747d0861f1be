//! Dense tensors with a small reverse-mode tape.
//!
//! Values are `f64`, row-major. A [`Graph`] records every operation as a
//! node that refers only to earlier nodes, so reverse insertion order is a
//! valid topological order for the backward pass.

mod graph;
mod optim;
mod rng;
mod tensor;

pub use graph::{gelu, gelu_grad, Gradients, Graph, NodeId};
pub use optim::{Adam, AdamConfig};
pub use rng::{Rng, Stream};
pub use tensor::{ParamId, ParamStore, Tensor};
