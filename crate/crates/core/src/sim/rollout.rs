//! Inventory transitions, inbound receipts, rewards, aggregate utilization,
//! and the episode engine that drives them either eagerly or on a tape.

use std::collections::VecDeque;
use std::io::{BufRead, Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed_indexed, rng_from_seed};
use crate::sim::ctx::{EagerCtx, SimCtx, TapeCtx};
use crate::sim::policy::{policy_order, PolicyParams};
use crate::autodiff::{Tape, VarId};

/// Replayable exogenous sequences for one agent, indexed by absolute week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousPath {
    pub demand: Vec<f64>,
    pub price: Vec<f64>,
    pub cost: Vec<f64>,
    pub lead_time: Vec<u32>,
}

impl ExogenousPath {
    pub fn validate(&self, v_max: u32) -> Result<()> {
        let n = self.demand.len();
        if self.price.len() != n || self.cost.len() != n || self.lead_time.len() != n {
            return Err(Error::ShapeMismatch {
                op: "ExogenousPath",
                detail: format!(
                    "demand {} price {} cost {} lead {}",
                    n,
                    self.price.len(),
                    self.cost.len(),
                    self.lead_time.len()
                ),
            });
        }
        for t in 0..n {
            if self.demand[t] < 0.0 || self.price[t] <= 0.0 || self.cost[t] <= 0.0 {
                return Err(Error::InvalidArgument(format!("bad exogenous values at week {t}")));
            }
            if self.lead_time[t] < 1 || self.lead_time[t] > v_max {
                return Err(Error::InvalidArgument(format!(
                    "lead time {} outside [1, {v_max}] at week {t}",
                    self.lead_time[t]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demand.is_empty()
    }
}

/// One undelivered order.
#[derive(Debug, Clone, Copy)]
pub struct PipelineEntry<V> {
    pub placed_week: usize,
    pub quantity: V,
    pub lead_time: u32,
}

/// One row of the rolling local history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistRow {
    pub order: f64,
    pub inventory: f64,
    pub demand: f64,
    pub inbound: f64,
    pub price: f64,
    pub cost: f64,
}

/// Endogenous inventory state for one agent.
pub struct AgentState<V> {
    pub on_hand: V,
    pub pipeline: Vec<PipelineEntry<V>>,
    pub history: VecDeque<HistRow>,
    pub history_cap: usize,
}

impl<V: Copy> AgentState<V> {
    fn push_history(&mut self, row: HistRow) {
        if self.history.len() == self.history_cap {
            self.history.pop_front();
        }
        self.history.push_back(row);
    }
}

/// Sum and remove pipeline entries arriving at episode week `t`.
pub fn receipts<C: SimCtx>(
    ctx: &mut C,
    pipeline: &mut Vec<PipelineEntry<C::V>>,
    t: usize,
) -> C::V {
    let mut due = Vec::new();
    pipeline.retain(|e| {
        if e.placed_week + e.lead_time as usize == t {
            due.push(e.quantity);
            false
        } else {
            true
        }
    });
    ctx.add_many(&due)
}

/// One agent, its exogenous path, and its policy.
#[derive(Debug, Clone, Copy)]
pub struct AgentInput<'a> {
    /// Identifier carried into the rollout record (catalog index).
    pub id: usize,
    pub exo: &'a ExogenousPath,
    pub policy: PolicyParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutCfg {
    /// Absolute week the episode starts at (into the exogenous paths).
    pub start_week: usize,
    /// Episode length in weeks (length of the cost path).
    pub weeks: usize,
    /// Rolling history window kept on each agent state.
    pub history_cap: usize,
    /// Std of multiplicative receipt noise; 0 disables the draw entirely.
    pub receipt_noise_sd: f64,
    pub seed: u64,
}

impl RolloutCfg {
    pub fn new(start_week: usize, weeks: usize, seed: u64) -> Self {
        RolloutCfg { start_week, weeks, history_cap: 64, receipt_noise_sd: 0.0, seed }
    }
}

/// Apply one week of transition dynamics to a single agent given its chosen
/// action: receipts arrive, demand is served (lost sales), the order joins
/// the pipeline, and the revenue-minus-ordering-cost reward is computed.
/// Returns (inbound, sales, reward).
pub fn step_agent<C: SimCtx>(
    ctx: &mut C,
    state: &mut AgentState<C::V>,
    exo: &ExogenousPath,
    abs_week: usize,
    episode_week: usize,
    action: C::V,
    receipt_factor: f64,
) -> Result<(C::V, f64, f64)> {
    if ctx.val(action) < 0.0 {
        return Err(Error::InvalidArgument(format!("negative action {}", ctx.val(action))));
    }
    let mut inbound = receipts(ctx, &mut state.pipeline, episode_week);
    if receipt_factor != 1.0 {
        inbound = ctx.affine(inbound, receipt_factor, 0.0);
    }
    let demand = exo.demand[abs_week];
    let i_minus = ctx.add(state.on_hand, inbound);
    let sales = ctx.min_const(demand, i_minus);
    let after = ctx.affine(i_minus, 1.0, -demand);
    let i_end = ctx.relu(after);
    state.pipeline.push(PipelineEntry {
        placed_week: episode_week,
        quantity: action,
        lead_time: exo.lead_time[abs_week],
    });
    let sales_v = ctx.val(sales);
    let reward = exo.price[abs_week] * sales_v - exo.cost[abs_week] * ctx.val(action);
    state.push_history(HistRow {
        order: ctx.val(action),
        inventory: ctx.val(i_end),
        demand,
        inbound: ctx.val(inbound),
        price: exo.price[abs_week],
        cost: exo.cost[abs_week],
    });
    state.on_hand = i_end;
    Ok((inbound, sales_v, reward))
}

/// Outputs of one simulated week.
pub struct WeekOut<V> {
    pub inbound_total: V,
    pub inbound_agent: Vec<V>,
    pub orders: Vec<V>,
    pub rewards: Vec<f64>,
    pub sales: Vec<f64>,
    pub inventory_end: Vec<f64>,
}

/// Episode engine: owns per-agent endogenous state and advances one week at
/// a time so closed-loop controllers can interleave queries with sim steps.
pub struct SimEngine<'a, V: Copy> {
    pub agents: Vec<AgentInput<'a>>,
    pub states: Vec<AgentState<V>>,
    pub cfg: RolloutCfg,
    pub week: usize,
    /// Receipt-noise factors [week][agent]; empty when noise is disabled.
    noise: Vec<Vec<f64>>,
}

impl<'a, V: Copy> SimEngine<'a, V> {
    pub fn new<C: SimCtx<V = V>>(
        ctx: &mut C,
        agents: Vec<AgentInput<'a>>,
        cfg: RolloutCfg,
    ) -> Result<Self> {
        for a in &agents {
            a.policy.validate()?;
            if a.exo.len() < cfg.start_week + cfg.weeks {
                return Err(Error::InvalidArgument(format!(
                    "exogenous path of agent {} has {} weeks, episode needs {}",
                    a.id,
                    a.exo.len(),
                    cfg.start_week + cfg.weeks
                )));
            }
        }
        // Steady-state-like start: I_0 = coverage * trailing-mean demand.
        let states = agents
            .iter()
            .map(|a| {
                let dbar = crate::sim::policy::demand_forecast(
                    a.exo,
                    cfg.start_week,
                    a.policy.demand_window,
                );
                AgentState {
                    on_hand: ctx.konst(a.policy.coverage_weeks * dbar),
                    pipeline: Vec::new(),
                    history: VecDeque::new(),
                    history_cap: cfg.history_cap,
                }
            })
            .collect();
        let noise = if cfg.receipt_noise_sd > 0.0 {
            (0..cfg.weeks)
                .map(|w| {
                    (0..agents.len())
                        .map(|i| {
                            let mut r = rng_from_seed(derive_seed_indexed(
                                cfg.seed,
                                "receipt-noise",
                                (w * agents.len() + i) as u64,
                            ));
                            let eps: f64 = r.gen_range(-1.0..1.0) * cfg.receipt_noise_sd * 1.7320508075688772;
                            (1.0 + eps).max(0.0)
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(SimEngine { agents, states, cfg, week: 0, noise })
    }

    /// Advance all agents one week under the shared cost `lambda_t`.
    pub fn step_week<C: SimCtx<V = V>>(&mut self, ctx: &mut C, lambda_t: V) -> Result<WeekOut<V>> {
        let t = self.week;
        let abs = self.cfg.start_week + t;
        let n = self.agents.len();
        let mut out = WeekOut {
            inbound_total: ctx.konst(0.0),
            inbound_agent: Vec::with_capacity(n),
            orders: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            sales: Vec::with_capacity(n),
            inventory_end: Vec::with_capacity(n),
        };
        for i in 0..n {
            let agent = self.agents[i];
            let exo = agent.exo;
            let st = &mut self.states[i];

            // Decide the order from the pre-step position (on-hand plus the
            // whole pipeline; invariant under receipt timing).
            let mut position = st.on_hand;
            for e in &st.pipeline {
                position = ctx.add(position, e.quantity);
            }
            let a = policy_order(ctx, exo, abs, position, lambda_t, &agent.policy)?;
            let factor = if self.noise.is_empty() { 1.0 } else { self.noise[t][i] };
            let (j, sales, reward) = step_agent(ctx, st, exo, abs, t, a, factor)?;

            out.inbound_agent.push(j);
            out.orders.push(a);
            out.rewards.push(reward);
            out.sales.push(sales);
            out.inventory_end.push(ctx.val(self.states[i].on_hand));
        }
        out.inbound_total = ctx.add_many(&out.inbound_agent);
        self.week += 1;
        Ok(out)
    }
}

/// One simulated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub agent_ids: Vec<usize>,
    pub start_week: usize,
    pub lambda: Vec<f64>,
    pub plan: Option<Vec<f64>>,
    /// Aggregate inbound J_t.
    pub inbound_total: Vec<f64>,
    /// Per-agent series, indexed [agent][week].
    pub orders: Vec<Vec<f64>>,
    pub inventory: Vec<Vec<f64>>,
    pub demand: Vec<Vec<f64>>,
    pub inbound: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
}

impl RolloutRecord {
    pub fn weeks(&self) -> usize {
        self.inbound_total.len()
    }

    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().map(|r| r.iter().sum::<f64>()).sum()
    }
}

/// Incremental builder used by closed-loop drivers that interleave model
/// queries with sim steps.
pub struct RecordBuilder {
    rec: RolloutRecord,
}

impl RecordBuilder {
    pub fn new(agents: &[AgentInput<'_>], cfg: &RolloutCfg) -> Self {
        RecordBuilder { rec: empty_record(agents, cfg, &[]) }
    }

    pub fn push_week<V: Copy, C: SimCtx<V = V>>(
        &mut self,
        ctx: &C,
        agents: &[AgentInput<'_>],
        cfg: &RolloutCfg,
        t: usize,
        lambda_t: f64,
        out: &WeekOut<V>,
    ) {
        self.rec.lambda.push(lambda_t);
        record_week(ctx, &mut self.rec, agents, cfg, t, out);
    }

    pub fn finish(self, plan: Option<Vec<f64>>) -> RolloutRecord {
        let mut rec = self.rec;
        rec.plan = plan;
        rec
    }
}

fn empty_record(agents: &[AgentInput<'_>], cfg: &RolloutCfg, lambda: &[f64]) -> RolloutRecord {
    let n = agents.len();
    RolloutRecord {
        agent_ids: agents.iter().map(|a| a.id).collect(),
        start_week: cfg.start_week,
        lambda: lambda.to_vec(),
        plan: None,
        inbound_total: Vec::with_capacity(cfg.weeks),
        orders: vec![Vec::with_capacity(cfg.weeks); n],
        inventory: vec![Vec::with_capacity(cfg.weeks); n],
        demand: vec![Vec::with_capacity(cfg.weeks); n],
        inbound: vec![Vec::with_capacity(cfg.weeks); n],
        rewards: vec![Vec::with_capacity(cfg.weeks); n],
    }
}

fn record_week<V: Copy, C: SimCtx<V = V>>(
    ctx: &C,
    rec: &mut RolloutRecord,
    agents: &[AgentInput<'_>],
    cfg: &RolloutCfg,
    t: usize,
    out: &WeekOut<V>,
) {
    rec.inbound_total.push(ctx.val(out.inbound_total));
    for i in 0..agents.len() {
        rec.orders[i].push(ctx.val(out.orders[i]));
        rec.inventory[i].push(out.inventory_end[i]);
        rec.demand[i].push(agents[i].exo.demand[cfg.start_week + t]);
        rec.inbound[i].push(ctx.val(out.inbound_agent[i]));
        rec.rewards[i].push(out.rewards[i]);
    }
}

/// Simulate all agents independently under the shared cost path. Pure in its
/// inputs; identical (agents, lambda, cfg) give a bit-identical record.
pub fn rollout(
    agents: &[AgentInput<'_>],
    lambda: &[f64],
    cfg: &RolloutCfg,
) -> Result<RolloutRecord> {
    if lambda.len() != cfg.weeks {
        return Err(Error::ShapeMismatch {
            op: "rollout",
            detail: format!("lambda has {} weeks, cfg wants {}", lambda.len(), cfg.weeks),
        });
    }
    if let Some(bad) = lambda.iter().find(|l| **l < 0.0) {
        return Err(Error::InvalidArgument(format!("negative cost {bad} in path")));
    }
    let mut ctx = EagerCtx;
    let mut eng = SimEngine::new(&mut ctx, agents.to_vec(), cfg.clone())?;
    let mut rec = empty_record(agents, cfg, lambda);
    for t in 0..cfg.weeks {
        let out = eng.step_week(&mut ctx, lambda[t])?;
        record_week(&ctx, &mut rec, agents, cfg, t, &out);
    }
    Ok(rec)
}

/// Tape-recorded rollout: the cost path is a vector of leaves so gradients of
/// inbound with respect to every lambda_t exist.
pub struct TapedRollout {
    pub lambda_ids: Vec<VarId>,
    pub inbound_total: Vec<VarId>,
    /// Order nodes, indexed [agent][week].
    pub order_nodes: Vec<Vec<VarId>>,
    pub record: RolloutRecord,
}

pub fn rollout_taped(
    tape: &mut Tape,
    agents: &[AgentInput<'_>],
    lambda: &[f64],
    cfg: &RolloutCfg,
) -> Result<TapedRollout> {
    if lambda.len() != cfg.weeks {
        return Err(Error::ShapeMismatch {
            op: "rollout_taped",
            detail: format!("lambda has {} weeks, cfg wants {}", lambda.len(), cfg.weeks),
        });
    }
    let lambda_ids: Vec<VarId> = lambda.iter().map(|l| tape.scalar(*l)).collect();
    let mut ctx = TapeCtx::new(tape);
    let mut eng = SimEngine::new(&mut ctx, agents.to_vec(), cfg.clone())?;
    let mut rec = empty_record(agents, cfg, lambda);
    let mut inbound_total = Vec::with_capacity(cfg.weeks);
    let mut order_nodes = vec![Vec::with_capacity(cfg.weeks); agents.len()];
    for t in 0..cfg.weeks {
        let out = eng.step_week(&mut ctx, lambda_ids[t])?;
        record_week(&ctx, &mut rec, agents, cfg, t, &out);
        inbound_total.push(out.inbound_total);
        for (i, a) in out.orders.iter().enumerate() {
            order_nodes[i].push(*a);
        }
    }
    Ok(TapedRollout { lambda_ids, inbound_total, order_nodes, record: rec })
}

/// L = sum_t sum_i (R_t^i - lambda_t J_t^i) + sum_t lambda_t G_t.
pub fn lagrangian_value(record: &RolloutRecord, plan: &[f64]) -> Result<f64> {
    if plan.len() != record.weeks() {
        return Err(Error::ShapeMismatch {
            op: "lagrangian_value",
            detail: format!("plan {} weeks vs record {}", plan.len(), record.weeks()),
        });
    }
    let mut total = 0.0;
    for t in 0..record.weeks() {
        let lam = record.lambda[t];
        for i in 0..record.n_agents() {
            total += record.rewards[i][t] - lam * record.inbound[i][t];
        }
        total += lam * plan[t];
    }
    Ok(total)
}

// ---- persistence -------------------------------------------------------
//
// Formats are documented in docs/formats.md. The JSONL form writes a header
// object followed by one object per week; the binary cache is a versioned
// little-endian block layout.

#[derive(Serialize, Deserialize)]
struct JsonlHeader {
    kind: String,
    agent_ids: Vec<usize>,
    start_week: usize,
    weeks: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonlWeek {
    week: usize,
    lambda: f64,
    cap: Option<f64>,
    inbound: f64,
    orders: Vec<f64>,
    inventory: Vec<f64>,
    demand: Vec<f64>,
    inbound_by_agent: Vec<f64>,
    rewards: Vec<f64>,
}

pub fn write_jsonl<W: Write>(rec: &RolloutRecord, mut w: W) -> Result<()> {
    let header = JsonlHeader {
        kind: "rollout".to_string(),
        agent_ids: rec.agent_ids.clone(),
        start_week: rec.start_week,
        weeks: rec.weeks(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for t in 0..rec.weeks() {
        let row = JsonlWeek {
            week: t,
            lambda: rec.lambda[t],
            cap: rec.plan.as_ref().map(|p| p[t]),
            inbound: rec.inbound_total[t],
            orders: rec.orders.iter().map(|s| s[t]).collect(),
            inventory: rec.inventory.iter().map(|s| s[t]).collect(),
            demand: rec.demand.iter().map(|s| s[t]).collect(),
            inbound_by_agent: rec.inbound.iter().map(|s| s[t]).collect(),
            rewards: rec.rewards.iter().map(|s| s[t]).collect(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<RolloutRecord> {
    let mut lines = r.lines();
    let header: JsonlHeader = {
        let line = lines
            .next()
            .ok_or_else(|| Error::Corrupt("empty rollout jsonl".into()))??;
        serde_json::from_str(&line)?
    };
    let n = header.agent_ids.len();
    let mut rec = RolloutRecord {
        agent_ids: header.agent_ids,
        start_week: header.start_week,
        lambda: Vec::new(),
        plan: None,
        inbound_total: Vec::new(),
        orders: vec![Vec::new(); n],
        inventory: vec![Vec::new(); n],
        demand: vec![Vec::new(); n],
        inbound: vec![Vec::new(); n],
        rewards: vec![Vec::new(); n],
    };
    let mut plan = Vec::new();
    let mut any_cap = false;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlWeek = serde_json::from_str(&line)?;
        rec.lambda.push(row.lambda);
        rec.inbound_total.push(row.inbound);
        if let Some(c) = row.cap {
            any_cap = true;
            plan.push(c);
        }
        for i in 0..n {
            rec.orders[i].push(row.orders[i]);
            rec.inventory[i].push(row.inventory[i]);
            rec.demand[i].push(row.demand[i]);
            rec.inbound[i].push(row.inbound_by_agent[i]);
            rec.rewards[i].push(row.rewards[i]);
        }
    }
    if any_cap {
        rec.plan = Some(plan);
    }
    Ok(rec)
}

const BIN_MAGIC: &[u8; 4] = b"PCR1";
const BIN_VERSION: u32 = 1;

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

/// Compact binary episode cache.
pub fn write_binary<W: Write>(rec: &RolloutRecord, mut w: W) -> Result<()> {
    w.write_all(BIN_MAGIC)?;
    w.write_all(&BIN_VERSION.to_le_bytes())?;
    let (n, weeks) = (rec.n_agents() as u64, rec.weeks() as u64);
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&weeks.to_le_bytes())?;
    w.write_all(&(rec.start_week as u64).to_le_bytes())?;
    w.write_all(&[u8::from(rec.plan.is_some())])?;
    for id in &rec.agent_ids {
        w.write_all(&(*id as u64).to_le_bytes())?;
    }
    write_f64s(&mut w, &rec.lambda)?;
    if let Some(p) = &rec.plan {
        write_f64s(&mut w, p)?;
    }
    write_f64s(&mut w, &rec.inbound_total)?;
    for series in [&rec.orders, &rec.inventory, &rec.demand, &rec.inbound, &rec.rewards] {
        for s in series.iter() {
            write_f64s(&mut w, s)?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<RolloutRecord> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BIN_MAGIC {
        return Err(Error::Corrupt("bad rollout cache magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != BIN_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: BIN_VERSION });
    }
    let mut b8 = [0u8; 8];
    let mut read_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let n = read_u64(&mut r)? as usize;
    let weeks = read_u64(&mut r)? as usize;
    let start_week = read_u64(&mut r)? as usize;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let mut agent_ids = Vec::with_capacity(n);
    let mut b8 = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        agent_ids.push(u64::from_le_bytes(b8) as usize);
    }
    let lambda = read_f64s(&mut r, weeks)?;
    let plan = if flag[0] == 1 { Some(read_f64s(&mut r, weeks)?) } else { None };
    let inbound_total = read_f64s(&mut r, weeks)?;
    let mut blocks = Vec::with_capacity(5);
    for _ in 0..5 {
        let mut series = Vec::with_capacity(n);
        for _ in 0..n {
            series.push(read_f64s(&mut r, weeks)?);
        }
        blocks.push(series);
    }
    let rewards = blocks.pop().unwrap();
    let inbound = blocks.pop().unwrap();
    let demand = blocks.pop().unwrap();
    let inventory = blocks.pop().unwrap();
    let orders = blocks.pop().unwrap();
    Ok(RolloutRecord {
        agent_ids,
        start_week,
        lambda,
        plan,
        inbound_total,
        orders,
        inventory,
        demand,
        inbound,
        rewards,
    })
}
