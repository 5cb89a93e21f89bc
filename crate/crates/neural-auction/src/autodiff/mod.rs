//! Minimal reverse-mode automatic differentiation.
//!
//! Supplies exactly the tensor operations the auction computation graph
//! needs (dense layers, ELU, min/max piecewise reductions, row softmax,
//! absolute pairwise differences) and nothing more. 64-bit throughout.

mod graph;
pub mod gradcheck;
mod tensor;

pub use graph::{DiffError, Graph, NodeId, LOG_FLOOR};
pub use tensor::Tensor;
