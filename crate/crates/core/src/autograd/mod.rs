//! Minimal dense reverse-mode automatic differentiation in `f64`.

mod adam;
pub mod check;
mod gemm;
mod graph;
pub mod nn;
mod param;
mod tensor;

pub use adam::Adam;
pub use graph::{Gradients, Graph, Var};
pub use param::{Param, ParamSet};
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) use graph::softmax_along;
