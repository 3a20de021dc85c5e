//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Graph`] is rebuilt for every forward pass. Parameters enter as
//! [`Graph::param`] leaves, intermediate results are appended in evaluation
//! order, and [`Graph::backward`] walks the tape in reverse, summing
//! contributions on fan-out. Min/max (both the reduction and the elementwise
//! form) route the whole gradient to the first extremum on ties.

pub mod gradcheck;
mod graph;
mod tensor;

pub use graph::{ElementwiseOp, Graph, ReduceOp, Var};
pub use tensor::Tensor;
