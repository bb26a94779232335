//! Training procedures: offline supervised regression for the primal map and
//! closed-loop direct backpropagation through the differentiable simulator
//! for the dual map.

pub mod adam;

pub use adam::{Adam, OptimizerKind, Sgd};
