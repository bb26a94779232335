//! Population-aware coordination interfaces for capacity-constrained
//! multi-agent systems, instantiated as a supply-chain capacity-control
//! stack: a differentiable replenishment simulator, learned primal
//! (cost -> utilization) and dual (plan -> cost) maps conditioned on
//! compact population summaries, their training procedures, and the
//! evaluation harness.

pub mod autodiff;
pub mod config;
pub mod control;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod nn;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
