//! A demonstration planning loop over the interface pair: query the dual map
//! for the plan's shadow costs, forward-check with the primal map, and apply
//! a proportional violation-closing revision gated by a marginal
//! acquisition cost. The revision rule itself is a placeholder for an
//! external planner; the interface contract is the point.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Fraction of the predicted violation closed per revision.
    pub step: f64,
    /// Fraction of predicted slack released per revision.
    pub relax: f64,
    pub max_revisions: usize,
    /// Capacity is only acquired where the predicted shadow cost exceeds
    /// this marginal acquisition cost.
    pub acquisition_cost: f64,
    /// Fixed point declared when the largest per-week change drops below.
    pub tolerance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            step: 0.5,
            relax: 0.1,
            max_revisions: 20,
            acquisition_cost: 0.5,
            tolerance: 1e-9,
        }
    }
}

/// The pair of maps the planner queries each revision.
pub trait CoordinationInterface {
    /// Dual map: cost trajectory enforcing the candidate plan.
    fn dual_costs(&mut self, plan: &[f64]) -> Result<Vec<f64>>;
    /// Primal map: utilization induced by a cost trajectory.
    fn primal_response(&mut self, lambda: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerIteration {
    pub revision: usize,
    pub plan: Vec<f64>,
    pub predicted_costs: Vec<f64>,
    pub predicted_utilization: Vec<f64>,
    pub predicted_violation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerOutcome {
    pub plan: Vec<f64>,
    pub log: Vec<PlannerIteration>,
}

/// Iterate plan revisions until a fixed point or the revision budget.
/// Plans never go negative.
pub fn planner_loop<I: CoordinationInterface>(
    iface: &mut I,
    initial_plan: &[f64],
    cfg: &PlannerConfig,
) -> Result<PlannerOutcome> {
    let mut plan = initial_plan.to_vec();
    let mut log = Vec::new();
    for revision in 0..=cfg.max_revisions {
        let costs = iface.dual_costs(&plan)?;
        let response = iface.primal_response(&costs)?;
        let violation: f64 =
            response.iter().zip(&plan).map(|(j, g)| (j - g).max(0.0)).sum();
        log.push(PlannerIteration {
            revision,
            plan: plan.clone(),
            predicted_costs: costs.clone(),
            predicted_utilization: response.clone(),
            predicted_violation: violation,
        });
        if revision == cfg.max_revisions {
            break;
        }
        let mut next = plan.clone();
        let mut max_change = 0.0f64;
        for t in 0..plan.len() {
            let over = (response[t] - plan[t]).max(0.0);
            let slack = (plan[t] - response[t]).max(0.0);
            let mut delta = -cfg.step * cfg.relax * slack;
            // acquire more capacity only where the shadow price justifies it
            if costs[t] > cfg.acquisition_cost {
                delta += cfg.step * over;
            }
            next[t] = (plan[t] + delta).max(0.0);
            max_change = max_change.max(delta.abs());
        }
        if max_change < cfg.tolerance {
            break;
        }
        plan = next;
    }
    Ok(PlannerOutcome { plan, log })
}
