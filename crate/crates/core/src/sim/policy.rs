//! The fixed local replenishment policy: order-up-to with a margin-gated
//! sigmoid shutoff,
//!
//!   a = sigmoid(kappa * (m - lambda)) * relu(target - position)
//!
//! with margin m = p_t - c_t, target = coverage_weeks * trailing-mean demand,
//! and position = on-hand + pipeline. Differentiable in lambda, monotonically
//! non-increasing in lambda, and responsiveness grows with demand and margin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ctx::SimCtx;
use crate::sim::rollout::ExogenousPath;

/// Demand-forecast floor, so agents with an all-zero trailing window still
/// carry a tiny target and can wake up when demand returns.
pub const DEMAND_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Target weeks of cover (> 0).
    pub coverage_weeks: f64,
    /// Gate slope kappa in 1/currency (> 0).
    pub gate_slope: f64,
    /// Trailing window for the mean-demand forecast, in weeks.
    pub demand_window: usize,
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        if self.coverage_weeks <= 0.0 || self.gate_slope <= 0.0 || self.demand_window == 0 {
            return Err(Error::InvalidArgument(format!(
                "policy params must be strictly positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Trailing-mean demand forecast at absolute week `t`, floored.
pub fn demand_forecast(exo: &ExogenousPath, t: usize, window: usize) -> f64 {
    let lo = t.saturating_sub(window);
    let mean = if lo == t {
        exo.demand.get(t).copied().unwrap_or(0.0)
    } else {
        exo.demand[lo..t].iter().sum::<f64>() / (t - lo) as f64
    };
    mean.max(DEMAND_FLOOR)
}

/// Order quantity for one agent at week `t`. `position` is on-hand plus all
/// undelivered pipeline quantities. Rejects negative lambda.
pub fn policy_order<C: SimCtx>(
    ctx: &mut C,
    exo: &ExogenousPath,
    t: usize,
    position: C::V,
    lambda: C::V,
    params: &PolicyParams,
) -> Result<C::V> {
    if ctx.val(lambda) < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "negative cost signal {} at week {t}",
            ctx.val(lambda)
        )));
    }
    let margin = exo.price[t] - exo.cost[t];
    let target = params.coverage_weeks * demand_forecast(exo, t, params.demand_window);
    // gate = sigmoid(kappa * (margin - lambda))
    let gate_in = ctx.affine(lambda, -params.gate_slope, params.gate_slope * margin);
    let gate = ctx.sigmoid(gate_in);
    // gap = relu(target - position)
    let neg_pos = ctx.affine(position, -1.0, target);
    let gap = ctx.relu(neg_pos);
    Ok(ctx.mul(gate, gap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ctx::EagerCtx;

    fn flat_exo(demand: f64, price: f64, cost: f64, weeks: usize) -> ExogenousPath {
        ExogenousPath {
            demand: vec![demand; weeks],
            price: vec![price; weeks],
            cost: vec![cost; weeks],
            lead_time: vec![2; weeks],
        }
    }

    fn params() -> PolicyParams {
        PolicyParams { coverage_weeks: 3.0, gate_slope: 1.0, demand_window: 8 }
    }

    #[test]
    fn saturated_gate_closes_order() {
        let exo = flat_exo(10.0, 6.0, 1.0, 20);
        let mut c = EagerCtx;
        let a = policy_order(&mut c, &exo, 10, 0.0, 1e6, &params()).unwrap();
        assert!(a < 1e-9, "order {a} should vanish as lambda -> inf");
    }

    #[test]
    fn full_position_leaves_no_gap() {
        let exo = flat_exo(10.0, 6.0, 1.0, 20);
        let mut c = EagerCtx;
        // position >= target = 30, margin 5 > 0, lambda 0, steep gate
        let p = PolicyParams { gate_slope: 50.0, ..params() };
        let a = policy_order(&mut c, &exo, 10, 35.0, 0.0, &p).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn hand_case_sigmoid_half_times_gap() {
        // dbar = 10, coverage 3 -> target 30; position 0; m = 5, kappa 1,
        // lambda = 5 -> gate = sigmoid(0) = 0.5 -> order 15.
        let exo = flat_exo(10.0, 6.0, 1.0, 20);
        let mut c = EagerCtx;
        let a = policy_order(&mut c, &exo, 10, 0.0, 5.0, &params()).unwrap();
        assert!((a - 15.0).abs() < 1e-12, "order {a}");
    }

    #[test]
    fn negative_lambda_rejected() {
        let exo = flat_exo(10.0, 6.0, 1.0, 20);
        let mut c = EagerCtx;
        assert!(policy_order(&mut c, &exo, 10, 0.0, -0.1, &params()).is_err());
    }
}
