//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Values live on a [`Graph`] tape; [`Var`] handles refer to recorded
//! nodes. Parameters are plain [`Tensor`]s that are registered as leaves at
//! the start of each forward pass, and gradients are read back after
//! [`Graph::backward`].

mod element;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use element::Element;
pub use gradcheck::{grad_check, grad_check_with_fault, GradCheckReport};
pub use graph::{Graph, LossKind, Var};
pub use tensor::Tensor;
