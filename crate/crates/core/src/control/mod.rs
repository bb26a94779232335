//! Planner-facing uses of the interfaces: primal iterative cost search, dual
//! direct-prediction closed-loop control, and a demonstration planning loop.
//! Control rollouts across scenarios are independent and parallelizable; a
//! single closed-loop rollout is sequential by construction.

pub mod dual_loop;
pub mod planner;
pub mod search;

pub use dual_loop::{closed_loop_rollout, dual_control_rollout, QueryView};
pub use planner::{
    planner_loop, CoordinationInterface, PlannerConfig, PlannerIteration, PlannerOutcome,
};
pub use search::{
    primal_cost_search, primal_search_control, FrozenPrimal, ResponseModel, SearchConfig,
    SearchResult,
};
