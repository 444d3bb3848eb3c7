//! Minimal reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_pairs};
pub use graph::{sigmoid, Gradients, Graph, Var, BCE_EPS};
pub use tensor::{scaled_max_diff, Tensor};
