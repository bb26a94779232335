//! Minimal reverse-mode autodiff over dense `f64` tensors: enough to express
//! the coordination-interface networks and to backpropagate through the
//! simulator's policy response. No GPU, no sparsity, no higher-order
//! derivatives.

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_coords, rel_err};
pub use tape::{sigmoid, softplus, Tape, VarId};
pub use tensor::{
    axpy, conv1d_forward, dot, matmul_acc, matmul_tb_acc, matvec_acc, vecmat_acc, Tensor,
};
