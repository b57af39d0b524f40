//! Small dense reverse-mode differentiation engine.
//!
//! Values are row-major `f64` tensors of rank 1 or 2. Binary element-wise ops
//! accept identical shapes or a single-element operand; everything else must
//! match exactly.

mod graph;
mod tensor;

pub use graph::{sigmoid, softmax_into, Graph, Var};
pub use tensor::Tensor;
