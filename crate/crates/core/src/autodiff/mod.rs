//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! The op set is exactly what the model forward pass needs; the graph is rebuilt
//! for every forward pass.

mod check;
mod graph;
mod tensor;


pub use check::{finite_diff_check, finite_diff_check_many, relative_error, Coverage, GradCheck};
pub use graph::{Graph, Var};
#[cfg(test)]
pub(crate) use graph::softplus;
pub use tensor::Tensor;
