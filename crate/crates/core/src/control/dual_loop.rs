//! Closed-loop execution: a streaming driver that advances the simulator one
//! week at a time, maintains incrementally encoded agent and aggregate
//! representations, and asks a controller for the week's broadcast cost.
//! Receding horizon: only the first predicted cost is committed each week.

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::nn::{
    demand_scale_at, dual_forward, EvalQuery, HeadKind, InterfaceParams, PoolKind, QueryScale,
    StreamingEncoder, AGENT_CHANNELS, GLOBAL_CHANNELS,
};
use crate::scenario::{holiday_distance, Catalog, CapacityPlan, PopulationSpec};
use crate::sim::{demand_forecast, EagerCtx, RecordBuilder, RolloutCfg, RolloutRecord, SimEngine};

/// Everything a controller may look at when choosing the week's cost.
pub struct QueryView<'a> {
    pub week: usize,
    /// Per-agent embeddings at this decision week.
    pub embeddings: &'a [Tensor],
    /// Aggregate-history embedding (Global Aggregate models).
    pub global_embedding: &'a Tensor,
    /// Raw future features (3, L).
    pub future_raw: &'a Tensor,
    pub agent_d: &'a [f64],
    pub d_scale: f64,
    /// Plan window [t, t+L), padded with the final plan value near the end.
    pub plan_window: &'a [f64],
}

/// Drive a closed-loop episode; `controller` returns the cost to apply.
pub fn closed_loop_rollout<F>(
    params: &InterfaceParams,
    catalog: &Catalog,
    population: &PopulationSpec,
    plan: &CapacityPlan,
    cfg: &RolloutCfg,
    mut controller: F,
) -> Result<RolloutRecord>
where
    F: FnMut(&QueryView<'_>) -> Result<f64>,
{
    let agents = crate::scenario::population_agents(catalog, population);
    let mut ctx = EagerCtx;
    let mut engine = SimEngine::new(&mut ctx, agents.clone(), cfg.clone())?;
    let mut builder = RecordBuilder::new(&agents, cfg);
    let horizon = params.hyper.horizon;
    let stats = &params.stats;
    let needs_agents = params.pooling != PoolKind::GlobalAggregate;

    // streaming encoders start on the pre-episode pad position
    let pad_agent = vec![0.0; AGENT_CHANNELS];
    let pad_global = vec![0.0; GLOBAL_CHANNELS];
    let mut agent_enc: Vec<StreamingEncoder> = Vec::new();
    let mut agent_emb: Vec<Tensor> = Vec::new();
    if needs_agents {
        agent_enc = (0..agents.len()).map(|_| StreamingEncoder::new(&params.enc)).collect();
        agent_emb = agent_enc.iter_mut().map(|e| Tensor::vector(e.push(&pad_agent))).collect();
    }
    let mut global_enc = StreamingEncoder::new(&params.enc);
    let mut global_emb = if needs_agents {
        Tensor::zeros(vec![params.hyper.cnn_channels])
    } else {
        Tensor::vector(global_enc.push(&pad_global))
    };

    let z = |x: f64, m: f64, s: f64| (x - m) / s.max(crate::nn::STD_FLOOR);
    for t in 0..cfg.weeks {
        let abs = cfg.start_week + t;
        // query-time quantities
        let agent_d: Vec<f64> = population
            .members
            .iter()
            .map(|m| demand_scale_at(catalog, m.catalog_idx, abs, params.hyper.history_len))
            .collect();
        let d_scale = agent_d.iter().sum::<f64>().max(1e-9);
        let inv_now: f64 = engine.states.iter().map(|s| s.on_hand).sum();
        let agg_forecast: f64 = agents
            .iter()
            .map(|a| demand_forecast(a.exo, abs, a.policy.demand_window))
            .sum();
        let mut fut = vec![0.0; 3 * horizon];
        for l in 0..horizon {
            fut[l] = agg_forecast;
            fut[horizon + l] = inv_now - (l as f64 + 1.0) * agg_forecast;
            fut[2 * horizon + l] = holiday_distance(abs + l);
        }
        let future_raw = Tensor::new(vec![3, horizon], fut)?;
        let last = *plan.values.last().expect("nonempty plan");
        let plan_window: Vec<f64> =
            (0..horizon).map(|l| plan.values.get(t + l).copied().unwrap_or(last)).collect();

        let view = QueryView {
            week: t,
            embeddings: &agent_emb,
            global_embedding: &global_emb,
            future_raw: &future_raw,
            agent_d: &agent_d,
            d_scale,
            plan_window: &plan_window,
        };
        let lambda_t = controller(&view)?;

        let out = engine.step_week(&mut ctx, lambda_t)?;
        builder.push_week(&ctx, &agents, cfg, t, lambda_t, &out);

        // push the completed week into the streaming encoders, standardized
        // exactly like the offline feature builder
        if needs_agents {
            for (i, enc) in agent_enc.iter_mut().enumerate() {
                let st = &engine.states[i];
                let row = st.history.back().expect("week just recorded");
                let feats = [
                    z(row.order, stats.agent_mean[0], stats.agent_std[0]),
                    z(row.inventory, stats.agent_mean[1], stats.agent_std[1]),
                    z(row.demand, stats.agent_mean[2], stats.agent_std[2]),
                    z(row.inbound, stats.agent_mean[3], stats.agent_std[3]),
                    z(row.price, stats.agent_mean[4], stats.agent_std[4]),
                    z(row.cost, stats.agent_mean[5], stats.agent_std[5]),
                    1.0,
                ];
                agent_emb[i] = Tensor::vector(enc.push(&feats));
            }
        } else {
            let mut sums = [0.0; 4];
            for st in &engine.states {
                let row = st.history.back().expect("week just recorded");
                sums[0] += row.order;
                sums[1] += row.inventory;
                sums[2] += row.demand;
                sums[3] += row.inbound;
            }
            let grow = [
                z(sums[0], stats.global_mean[0], stats.global_std[0]),
                z(sums[1], stats.global_mean[1], stats.global_std[1]),
                z(sums[2], stats.global_mean[2], stats.global_std[2]),
                z(sums[3], stats.global_mean[3], stats.global_std[3]),
                1.0,
            ];
            global_emb = Tensor::vector(global_enc.push(&grow));
        }
    }
    Ok(builder.finish(Some(plan.values[..cfg.weeks.min(plan.values.len())].to_vec())))
}

/// Dual direct prediction: at each week predict the cost window from the
/// plan window and commit the first step.
pub fn dual_control_rollout(
    params: &InterfaceParams,
    catalog: &Catalog,
    population: &PopulationSpec,
    plan: &CapacityPlan,
    cfg: &RolloutCfg,
) -> Result<RolloutRecord> {
    if params.head != HeadKind::Dual {
        return Err(crate::Error::HeadMismatch {
            expected: "dual".into(),
            found: params.head.to_string(),
        });
    }
    closed_loop_rollout(params, catalog, population, plan, cfg, |view| {
        let q = EvalQuery {
            embeddings: view.embeddings,
            global_embedding: Some(view.global_embedding),
            signal: view.plan_window,
            future_raw: view.future_raw,
            agent_d: view.agent_d,
            scale: QueryScale::direct(view.d_scale),
        };
        let costs = dual_forward(params, &q)?;
        Ok(costs[0])
    })
}
