//! Agent-level responsiveness to the broadcast cost signal: the mean absolute
//! derivative of the agent's committed inbound (its order) with respect to
//! the same-week cost, taken over a set of evaluation weeks.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::sim::rollout::{rollout, rollout_taped, AgentInput, RolloutCfg};

/// s_i via the tape: for each evaluation week t, backpropagate from the
/// order node a_t and read the gradient on lambda_t.
pub fn agent_sensitivity(
    agent: &AgentInput<'_>,
    lambda: &[f64],
    cfg: &RolloutCfg,
    eval_weeks: &[usize],
) -> Result<f64> {
    if eval_weeks.is_empty() {
        return Err(Error::Empty("agent_sensitivity eval weeks".into()));
    }
    let mut total = 0.0;
    for &t in eval_weeks {
        if t >= cfg.weeks {
            return Err(Error::InvalidArgument(format!(
                "eval week {t} beyond episode of {} weeks",
                cfg.weeks
            )));
        }
        // Gradients of a_t only involve weeks <= t; truncate the episode.
        let mut short = cfg.clone();
        short.weeks = t + 1;
        let mut tape = Tape::new();
        let tr = rollout_taped(&mut tape, std::slice::from_ref(agent), &lambda[..t + 1], &short)?;
        tape.backward_seeded(tr.order_nodes[0][t], Tensor::scalar(1.0))?;
        total += tape.grad(tr.lambda_ids[t]).item().abs();
    }
    Ok(total / eval_weeks.len() as f64)
}

/// Finite-difference cross-check of `agent_sensitivity`.
pub fn agent_sensitivity_fd(
    agent: &AgentInput<'_>,
    lambda: &[f64],
    cfg: &RolloutCfg,
    eval_weeks: &[usize],
    eps: f64,
) -> Result<f64> {
    if eval_weeks.is_empty() {
        return Err(Error::Empty("agent_sensitivity eval weeks".into()));
    }
    let agents = std::slice::from_ref(agent);
    let mut total = 0.0;
    for &t in eval_weeks {
        let mut up = lambda.to_vec();
        up[t] += eps;
        let mut dn = lambda.to_vec();
        dn[t] = (dn[t] - eps).max(0.0);
        let h = up[t] - dn[t];
        let ru = rollout(agents, &up, cfg)?;
        let rd = rollout(agents, &dn, cfg)?;
        total += ((ru.orders[0][t] - rd.orders[0][t]) / h).abs();
    }
    Ok(total / eval_weeks.len() as f64)
}
