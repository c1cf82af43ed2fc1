//! Dense tensor arithmetic with reverse-mode automatic differentiation.
//!
//! Values are 64-bit floats in row-major order. Graphs are rebuilt on every
//! forward pass; parameters enter a graph as leaves via [`Graph::param`],
//! and after [`Graph::backward`] their gradients are deposited with
//! [`Gradients::accumulate_into`]. Repeated deposits sum until
//! [`zero_grad`] clears them.
//!
//! [`Graph::detach`] is the gradient-stop primitive: the detached node holds
//! the same value but never propagates gradient to its source.
//!
//! The ReLU derivative at exactly zero is taken as zero.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::{zero_grad, Tensor};
