//! Primal iterative cost search: optimize an unconstrained cost vector
//! through the frozen forward-response model, with lambda = relu(lambda~),
//! Adam steps, and early stopping when predicted utilization tracks the
//! target within the MAPE threshold.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, VarId};
use crate::control::dual_loop::{closed_loop_rollout, QueryView};
use crate::error::{Error, Result};
use crate::nn::{
    bind_interface, interface_forward, GlobalSource, HeadKind, InterfaceParams, QueryScale,
    ReprSource, SignalInput,
};
use crate::scenario::{CapacityPlan, Catalog, PopulationSpec};
use crate::sim::{RolloutCfg, RolloutRecord};
use crate::train::adam::Adam;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Early-stop threshold on MAPE(J_hat, G), as a fraction.
    pub mape_stop: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { learning_rate: 0.1, max_iters: 100, mape_stop: 0.03 }
    }
}

/// A frozen forward-response model the search differentiates through.
pub trait ResponseModel {
    /// Predicted utilization for a nonnegative cost-window node `lambda` [L].
    fn predict(&self, tape: &mut Tape, lambda: VarId) -> Result<VarId>;
    fn horizon(&self) -> usize;
}

/// Search output: the nonnegative cost window and the per-iteration loss
/// trace (index 0 is the initial loss).
pub struct SearchResult {
    pub lambda: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
}

pub fn primal_cost_search<M: ResponseModel>(
    model: &M,
    plan_window: &[f64],
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    let l = model.horizon();
    if plan_window.len() != l {
        return Err(Error::ShapeMismatch {
            op: "primal_cost_search",
            detail: format!("plan window {} vs horizon {}", plan_window.len(), l),
        });
    }
    let mut raw = Tensor::zeros(vec![l]);
    let mut adam = Adam::new(cfg.learning_rate, &[l]);
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut tape = Tape::new();
        let leaf = tape.leaf(raw.clone());
        let lambda = tape.relu(leaf);
        let j_hat = model.predict(&mut tape, lambda)?;
        let jv = tape.value(j_hat).clone();
        if !jv.is_finite() {
            return Err(Error::NonFinite("primal search prediction".into()));
        }
        // L_search = (1/L) sum relu(J_hat - G)^2
        let plan_leaf = tape.leaf(Tensor::vector(plan_window.to_vec()));
        let over = tape.sub(j_hat, plan_leaf)?;
        let over = tape.relu(over);
        let sq = tape.mul(over, over)?;
        let sum = tape.sum(sq);
        let loss_node = tape.scale(sum, 1.0 / l as f64);
        let loss = tape.value(loss_node).item();
        trace.push(loss);

        let mape = jv
            .data
            .iter()
            .zip(plan_window)
            .filter(|(_, g)| **g > 1e-9)
            .map(|(j, g)| ((j - g) / g).abs())
            .sum::<f64>()
            / plan_window.iter().filter(|g| **g > 1e-9).count().max(1) as f64;
        if loss == 0.0 || mape < cfg.mape_stop || iterations >= cfg.max_iters {
            break;
        }

        tape.backward(loss_node)?;
        let grad = tape.grad(leaf);
        adam.step_single(&mut raw, &grad, 0, None);
        iterations += 1;
    }
    let lambda = raw.data.iter().map(|x| x.max(0.0)).collect();
    Ok(SearchResult { lambda, loss_trace: trace, iterations })
}

/// The real interface as a frozen response model, with per-week cached
/// embeddings so search iterations only pay for the query-side pass.
pub struct FrozenPrimal<'a> {
    pub params: &'a InterfaceParams,
    pub embeddings: &'a [Tensor],
    pub global_embedding: Option<&'a Tensor>,
    pub future_raw: &'a Tensor,
    pub agent_d: &'a [f64],
    pub scale: QueryScale,
}

impl ResponseModel for FrozenPrimal<'_> {
    fn predict(&self, tape: &mut Tape, lambda: VarId) -> Result<VarId> {
        let bound = bind_interface(tape, self.params, false);
        let repr = ReprSource::Consts(self.embeddings);
        let global = self.global_embedding.map(GlobalSource::Const);
        interface_forward(
            tape,
            self.params,
            &bound,
            &repr,
            global.as_ref(),
            SignalInput::Node(lambda),
            self.future_raw,
            self.agent_d,
            &self.scale,
        )
    }

    fn horizon(&self) -> usize {
        self.params.hyper.horizon
    }
}

/// Capacity control by receding-horizon primal search: at each week search a
/// cost window against the plan window through the frozen primal model and
/// apply the first step.
pub fn primal_search_control(
    params: &InterfaceParams,
    catalog: &Catalog,
    population: &PopulationSpec,
    plan: &CapacityPlan,
    cfg: &RolloutCfg,
    search: &SearchConfig,
) -> Result<RolloutRecord> {
    if params.head != HeadKind::Primal {
        return Err(Error::HeadMismatch {
            expected: "primal".into(),
            found: params.head.to_string(),
        });
    }
    closed_loop_rollout(params, catalog, population, plan, cfg, |view: &QueryView<'_>| {
        let frozen = FrozenPrimal {
            params,
            embeddings: view.embeddings,
            global_embedding: Some(view.global_embedding),
            future_raw: view.future_raw,
            agent_d: view.agent_d,
            scale: QueryScale::direct(view.d_scale),
        };
        let result = primal_cost_search(&frozen, view.plan_window, search)?;
        Ok(result.lambda[0])
    })
}
