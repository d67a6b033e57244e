//! Dense `f64` tensors and a static reverse-mode differentiation graph.
//!
//! Graphs are built node by node, evaluated against named input bindings,
//! and differentiated from a one-element output. Broadcasting is limited to
//! [`Graph::scale`]; every other shape mix is explicit.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Bindings, Evaluation, Gradients, Graph, InputKind, Node, NodeId, Op, Primitive};
pub use tensor::Tensor;

pub(crate) use graph::softmax_in_place;
