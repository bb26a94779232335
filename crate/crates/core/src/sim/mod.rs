//! Differentiable capacity-constrained inventory simulator: fixed
//! cost-sensitive local replenishment policies, inventory transitions,
//! inbound receipts, rewards, and aggregate utilization. Rollouts are pure
//! functions of their inputs; differentiable rollouts confine their tape to
//! one thread.

pub mod ctx;
pub mod policy;
pub mod rollout;
pub mod sensitivity;

pub use ctx::{EagerCtx, SimCtx, TapeCtx};
pub use policy::{demand_forecast, policy_order, PolicyParams, DEMAND_FLOOR};
pub use rollout::{
    lagrangian_value, read_binary, read_jsonl, receipts, rollout, rollout_taped, step_agent,
    write_binary, write_jsonl, AgentInput, AgentState, ExogenousPath, HistRow, PipelineEntry,
    RecordBuilder, RolloutCfg, RolloutRecord, SimEngine, TapedRollout, WeekOut,
};
pub use sensitivity::{agent_sensitivity, agent_sensitivity_fd};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{rel_err, Tape};
    use rand::Rng;

    fn flat_exo(demand: f64, price: f64, cost: f64, lead: u32, weeks: usize) -> ExogenousPath {
        ExogenousPath {
            demand: vec![demand; weeks],
            price: vec![price; weeks],
            cost: vec![cost; weeks],
            lead_time: vec![lead; weeks],
        }
    }

    fn policy() -> PolicyParams {
        PolicyParams { coverage_weeks: 3.0, gate_slope: 1.0, demand_window: 8 }
    }

    fn state_with(on_hand: f64, pipeline: Vec<(usize, f64, u32)>) -> AgentState<f64> {
        let mut st = AgentState {
            on_hand,
            pipeline: Vec::new(),
            history: Default::default(),
            history_cap: 64,
        };
        for (w, q, l) in pipeline {
            st.pipeline.push(PipelineEntry { placed_week: w, quantity: q, lead_time: l });
        }
        st
    }

    #[test]
    fn receipts_indicator_matches() {
        let mut c = EagerCtx;
        let mut st = state_with(0.0, vec![(0, 5.0, 2)]);
        assert_eq!(receipts(&mut c, &mut st.pipeline, 2), 5.0);
        assert!(st.pipeline.is_empty());
    }

    #[test]
    fn receipts_indicator_fails() {
        let mut c = EagerCtx;
        let mut st = state_with(0.0, vec![(0, 5.0, 2)]);
        assert_eq!(receipts(&mut c, &mut st.pipeline, 1), 0.0);
        assert_eq!(st.pipeline.len(), 1);
    }

    /// Hand evaluation of the indicator sum over two entries.
    #[test]
    fn receipts_two_entries_due_same_week() {
        let mut c = EagerCtx;
        let mut st = state_with(0.0, vec![(0, 5.0, 2), (1, 3.0, 1)]);
        assert_eq!(receipts(&mut c, &mut st.pipeline, 2), 8.0);
        assert!(st.pipeline.is_empty());
    }

    /// Hand evaluation of the transition equations:
    /// I=3, receipts=5, D=6, p=2, c=1, a=4 -> sales 6, I'=2, R = 12 - 4 = 8.
    #[test]
    fn step_agent_hand_case() {
        let exo = flat_exo(6.0, 2.0, 1.0, 2, 10);
        let mut c = EagerCtx;
        let mut st = state_with(3.0, vec![(0, 5.0, 2)]);
        let (j, sales, reward) = step_agent(&mut c, &mut st, &exo, 2, 2, 4.0, 1.0).unwrap();
        assert_eq!(j, 5.0);
        assert_eq!(sales, 6.0);
        assert_eq!(st.on_hand, 2.0);
        assert_eq!(reward, 8.0);
        // the new order joined the pipeline
        assert_eq!(st.pipeline.len(), 1);
        assert_eq!(st.pipeline[0].placed_week, 2);
    }

    #[test]
    fn step_agent_no_demand_accumulates() {
        let mut exo = flat_exo(6.0, 2.0, 1.0, 2, 10);
        exo.demand[2] = 0.0;
        let mut c = EagerCtx;
        let mut st = state_with(3.0, vec![(0, 5.0, 2)]);
        let (_, sales, _) = step_agent(&mut c, &mut st, &exo, 2, 2, 0.0, 1.0).unwrap();
        assert_eq!(sales, 0.0);
        assert_eq!(st.on_hand, 8.0);
    }

    #[test]
    fn step_agent_stockout() {
        let exo = flat_exo(7.0, 2.0, 1.0, 2, 10);
        let mut c = EagerCtx;
        let mut st = state_with(0.0, vec![]);
        let (_, sales, _) = step_agent(&mut c, &mut st, &exo, 2, 2, 0.0, 1.0).unwrap();
        assert_eq!(sales, 0.0);
        assert_eq!(st.on_hand, 0.0);
    }

    #[test]
    fn single_agent_rollout_aggregates_to_itself() {
        let exo = flat_exo(10.0, 5.0, 2.0, 2, 30);
        let agents = [AgentInput { id: 0, exo: &exo, policy: policy() }];
        let rec = rollout(&agents, &vec![0.0; 20], &RolloutCfg::new(4, 20, 1)).unwrap();
        assert_eq!(rec.inbound_total, rec.inbound[0]);
    }

    #[test]
    fn huge_lambda_closes_the_gate_entirely() {
        let exo = flat_exo(10.0, 5.0, 2.0, 2, 30);
        let agents = [AgentInput { id: 0, exo: &exo, policy: policy() }];
        let rec = rollout(&agents, &vec![1e9; 20], &RolloutCfg::new(4, 20, 1)).unwrap();
        // empty starting pipeline: with the gate saturated to zero no order
        // is ever placed, so no inbound ever arrives
        assert!(rec.inbound_total.iter().all(|j| *j == 0.0));
        assert!(rec.orders[0].iter().all(|a| *a == 0.0));
    }

    /// Oracle: run the two single-agent rollouts and sum elementwise.
    #[test]
    fn disjoint_union_equals_sum_of_rollouts() {
        let mut exo_a = flat_exo(10.0, 5.0, 2.0, 2, 40);
        let mut exo_b = flat_exo(4.0, 7.0, 3.0, 3, 40);
        for t in 0..40 {
            exo_a.demand[t] = if t % 2 == 0 { 12.0 } else { 0.0 };
            exo_b.demand[t] = if t % 3 == 0 { 6.0 } else { 2.0 };
        }
        let lam: Vec<f64> = (0..25).map(|t| 0.3 * (t % 5) as f64).collect();
        let cfg = RolloutCfg::new(8, 25, 3);
        let a = AgentInput { id: 0, exo: &exo_a, policy: policy() };
        let b = AgentInput {
            id: 1,
            exo: &exo_b,
            policy: PolicyParams { coverage_weeks: 2.0, gate_slope: 0.7, demand_window: 8 },
        };
        let ra = rollout(&[a], &lam, &cfg).unwrap();
        let rb = rollout(&[b], &lam, &cfg).unwrap();
        let rab = rollout(&[a, b], &lam, &cfg).unwrap();
        for t in 0..25 {
            let sum = ra.inbound_total[t] + rb.inbound_total[t];
            assert!((rab.inbound_total[t] - sum).abs() < 1e-12, "week {t}");
        }
    }

    /// Monotone response at fixed state: share the cost prefix, diverge only
    /// at week t, and every agent's week-t order is non-increasing in the
    /// week-t cost (the gate is monotone and the gap is state-determined).
    #[test]
    fn monotone_response_at_fixed_state() {
        let mut rng = crate::rng::rng_from_seed(17);
        for inst in 0..40 {
            let weeks = 18usize;
            let exos: Vec<ExogenousPath> = (0..6)
                .map(|_| {
                    let base: f64 = rng.gen_range(1.0..25.0);
                    ExogenousPath {
                        demand: (0..50).map(|_| base * rng.gen_range(0.3..1.7)).collect(),
                        price: (0..50).map(|_| rng.gen_range(3.0..9.0)).collect(),
                        cost: (0..50).map(|_| rng.gen_range(1.0..2.9)).collect(),
                        lead_time: (0..50).map(|_| rng.gen_range(1..=4)).collect(),
                    }
                })
                .collect();
            let agents: Vec<AgentInput> = exos
                .iter()
                .enumerate()
                .map(|(i, exo)| AgentInput {
                    id: i,
                    exo,
                    policy: PolicyParams {
                        coverage_weeks: rng.gen_range(2.0..4.0),
                        gate_slope: rng.gen_range(0.5..2.0),
                        demand_window: 8,
                    },
                })
                .collect();
            let mut lam: Vec<f64> = (0..weeks).map(|_| rng.gen_range(0.0..3.0)).collect();
            let t_split = rng.gen_range(0..weeks);
            let u1: f64 = rng.gen_range(0.0..4.0);
            let u2: f64 = u1 + rng.gen_range(0.1..2.0);
            let cfg = RolloutCfg::new(12, weeks, inst);
            lam[t_split] = u1;
            let r1 = rollout(&agents, &lam, &cfg).unwrap();
            lam[t_split] = u2;
            let r2 = rollout(&agents, &lam, &cfg).unwrap();
            for i in 0..agents.len() {
                assert!(
                    r2.orders[i][t_split] <= r1.orders[i][t_split] + 1e-12,
                    "instance {inst}: agent {i} order grew with the cost"
                );
            }
        }
    }

    /// Closed-loop counterexample: under uniform costs, realized J_t is NOT
    /// pointwise monotone in the cost level, because under-ordering at a
    /// higher cost drains inventory and widens later order-up-to gaps. This
    /// pins down why the monotone property is stated at fixed state.
    #[test]
    fn uniform_lambda_pointwise_monotonicity_counterexample() {
        // A demand spike wipes inventory and opens a large order-up-to gap X.
        // One week later the remaining gap is roughly X(1-g), so the order is
        // g(1-g)X: *larger* for the weaker gate. With gates 0.90 (low cost)
        // vs 0.60 (high cost), the high-cost rollout rebounds harder.
        let mut exo = flat_exo(1.0, 10.0, 1.0, 2, 40);
        exo.demand[12] = 40.0; // episode week 4
        let agent = AgentInput {
            id: 0,
            exo: &exo,
            policy: PolicyParams { coverage_weeks: 10.0, gate_slope: 1.0, demand_window: 8 },
        };
        let cfg = RolloutCfg::new(8, 12, 1);
        // margin 9: u=6.8 -> gate ~ 0.90, u=8.6 -> gate ~ 0.60
        let r_low = rollout(&[agent], &vec![6.8; 12], &cfg).unwrap();
        let r_high = rollout(&[agent], &vec![8.6; 12], &cfg).unwrap();
        let grew = (0..12).any(|t| r_high.inbound_total[t] > r_low.inbound_total[t] + 1e-9);
        assert!(grew, "expected a week where the higher uniform cost yields more inbound");
    }

    #[test]
    fn determinism_bit_identical() {
        let exo = flat_exo(9.0, 5.0, 2.0, 2, 40);
        let agents = [AgentInput { id: 0, exo: &exo, policy: policy() }];
        let lam: Vec<f64> = (0..30).map(|t| (t as f64 * 0.37).sin().abs()).collect();
        let cfg = RolloutCfg::new(5, 30, 99);
        let r1 = rollout(&agents, &lam, &cfg).unwrap();
        let r2 = rollout(&agents, &lam, &cfg).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn conservation_cumulative_inbound_below_orders() {
        let mut rng = crate::rng::rng_from_seed(7);
        for _ in 0..50 {
            let weeks = 25;
            let exo = ExogenousPath {
                demand: (0..60).map(|_| rng.gen_range(0.0..20.0)).collect(),
                price: vec![5.0; 60],
                cost: vec![2.0; 60],
                lead_time: (0..60).map(|_| rng.gen_range(1..=4)).collect(),
            };
            let agents = [AgentInput { id: 0, exo: &exo, policy: policy() }];
            let lam: Vec<f64> = (0..weeks).map(|_| rng.gen_range(0.0..4.0)).collect();
            let rec = rollout(&agents, &lam, &RolloutCfg::new(10, weeks, 1)).unwrap();
            let mut cj = 0.0;
            let mut ca = 0.0;
            for t in 0..weeks {
                cj += rec.inbound[0][t];
                ca += rec.orders[0][t];
                assert!(cj <= ca + 1e-9, "cumulative inbound exceeded orders at week {t}");
            }
        }
    }

    /// Orders stop exactly once demand dries up and position covers the
    /// floored target, so cumulative equality holds past the last placed
    /// week plus the maximum lead time.
    #[test]
    fn conservation_equality_after_drain() {
        let mut exo = flat_exo(10.0, 5.0, 2.0, 2, 60);
        for t in 20..60 {
            exo.demand[t] = 0.0;
        }
        let agents = [AgentInput { id: 0, exo: &exo, policy: policy() }];
        let weeks = 50;
        let rec = rollout(&agents, &vec![0.5; weeks], &RolloutCfg::new(0, weeks, 1)).unwrap();
        let last_order_week =
            (0..weeks).rev().find(|&t| rec.orders[0][t] > 0.0).expect("some order placed");
        assert!(last_order_week + 4 < weeks, "scenario must quiesce before the horizon ends");
        let total_orders: f64 = rec.orders[0].iter().sum();
        let arrived: f64 = rec.inbound[0].iter().sum();
        assert!(
            (total_orders - arrived).abs() < 1e-9,
            "orders {total_orders} vs arrived {arrived}"
        );
    }

    #[test]
    fn lagrangian_zero_costs_is_total_reward() {
        let exo = flat_exo(10.0, 5.0, 2.0, 2, 30);
        let agents = [AgentInput { id: 0, exo: &exo, policy: policy() }];
        let rec = rollout(&agents, &vec![0.0; 20], &RolloutCfg::new(4, 20, 1)).unwrap();
        let l = lagrangian_value(&rec, &vec![123.0; 20]).unwrap();
        assert!((l - rec.total_reward()).abs() < 1e-9);
    }

    #[test]
    fn lagrangian_cancels_when_plan_equals_inbound() {
        let exo = flat_exo(10.0, 5.0, 2.0, 2, 30);
        let agents = [AgentInput { id: 0, exo: &exo, policy: policy() }];
        let rec = rollout(&agents, &vec![1.3; 20], &RolloutCfg::new(4, 20, 1)).unwrap();
        let l = lagrangian_value(&rec, &rec.inbound_total.clone()).unwrap();
        let rel = (l - rec.total_reward()).abs() / rec.total_reward().abs().max(1.0);
        assert!(rel < 1e-12, "penalty and bonus should cancel, got rel {rel}");
    }

    /// Spreadsheet-style hand evaluation on a two-week record.
    #[test]
    fn lagrangian_hand_case() {
        let rec = RolloutRecord {
            agent_ids: vec![0, 1],
            start_week: 0,
            lambda: vec![2.0, 0.5],
            plan: None,
            inbound_total: vec![7.0, 3.0],
            orders: vec![vec![0.0; 2]; 2],
            inventory: vec![vec![0.0; 2]; 2],
            demand: vec![vec![0.0; 2]; 2],
            inbound: vec![vec![4.0, 1.0], vec![3.0, 2.0]],
            rewards: vec![vec![10.0, 6.0], vec![2.0, 8.0]],
        };
        // sum_i sum_t (R - lam*J): (10-8) + (6-0.5) + (2-6) + (8-1) = 10.5
        // + sum_t lam*G with G = [5, 4]: 10 + 2 = 12 -> total 22.5
        let l = lagrangian_value(&rec, &[5.0, 4.0]).unwrap();
        assert!((l - 22.5).abs() < 1e-12, "{l}");
    }

    /// Tape gradient of total inbound w.r.t. each lambda_t against central
    /// finite differences on a 5-agent, 20-week instance.
    #[test]
    fn taped_rollout_gradient_matches_finite_differences() {
        let mut rng = crate::rng::rng_from_seed(21);
        let exos: Vec<ExogenousPath> = (0..5)
            .map(|_| ExogenousPath {
                demand: (0..40).map(|_| rng.gen_range(2.0..15.0)).collect(),
                price: (0..40).map(|_| rng.gen_range(4.0..8.0)).collect(),
                cost: (0..40).map(|_| rng.gen_range(1.0..3.0)).collect(),
                lead_time: (0..40).map(|_| rng.gen_range(1..=3)).collect(),
            })
            .collect();
        let agents: Vec<AgentInput> = exos
            .iter()
            .enumerate()
            .map(|(i, exo)| AgentInput {
                id: i,
                exo,
                policy: PolicyParams {
                    coverage_weeks: 2.0 + i as f64 * 0.3,
                    gate_slope: 0.8,
                    demand_window: 8,
                },
            })
            .collect();
        let weeks = 20;
        let lam: Vec<f64> = (0..weeks).map(|_| rng.gen_range(0.5..3.0)).collect();
        let cfg = RolloutCfg::new(10, weeks, 5);

        let mut tape = Tape::new();
        let tr = rollout_taped(&mut tape, &agents, &lam, &cfg).unwrap();
        let total = tape.add_n(&tr.inbound_total).unwrap();
        tape.backward(total).unwrap();
        let analytic: Vec<f64> = tr.lambda_ids.iter().map(|id| tape.grad(*id).item()).collect();

        let eps = 1e-5;
        for t in 0..weeks {
            let mut up = lam.clone();
            up[t] += eps;
            let mut dn = lam.clone();
            dn[t] -= eps;
            let ju: f64 = rollout(&agents, &up, &cfg).unwrap().inbound_total.iter().sum();
            let jd: f64 = rollout(&agents, &dn, &cfg).unwrap().inbound_total.iter().sum();
            let fd = (ju - jd) / (2.0 * eps);
            assert!(
                rel_err(analytic[t], fd) < 1e-4,
                "week {t}: analytic {} fd {}",
                analytic[t],
                fd
            );
        }
    }

    #[test]
    fn sensitivity_zero_demand_agent_is_zero() {
        let exo = flat_exo(0.0, 5.0, 2.0, 2, 30);
        let agent = AgentInput { id: 0, exo: &exo, policy: policy() };
        // the floored forecast keeps a tiny positive target, but the start
        // inventory covers it, so the gap (and its lambda response) is zero
        let s = agent_sensitivity(&agent, &vec![1.0; 15], &RolloutCfg::new(4, 15, 1), &[3, 7, 11])
            .unwrap();
        assert_eq!(s, 0.0);
    }

    /// Analytic single-step case: |da/dlambda| = kappa * sig * (1 - sig) * gap
    /// at an evaluation point free of feedback from earlier weeks.
    #[test]
    fn sensitivity_analytic_single_step() {
        // Low-demand history for the starting stock, higher demand inside the
        // trailing window. At episode week 0 the target equals the initial
        // stock exactly (gap 0, order 0), so at week 1 the position carries
        // no lambda dependence and the derivative is the pure gate term.
        let mut exo = flat_exo(2.0, 5.0, 2.0, 2, 30);
        for t in 4..8 {
            exo.demand[t] = 20.0;
        }
        let agent = AgentInput { id: 0, exo: &exo, policy: policy() };
        let lam = 2.0;

        // at week 0 the gap is exactly zero
        let cfg0 = RolloutCfg::new(8, 1, 1);
        let s0 = agent_sensitivity(&agent, &[lam], &cfg0, &[0]).unwrap();
        assert_eq!(s0, 0.0);

        let cfg = RolloutCfg::new(8, 2, 1);
        let s1 = agent_sensitivity(&agent, &[lam, lam], &cfg, &[1]).unwrap();
        let rec = rollout(&[agent], &[lam, lam], &cfg).unwrap();
        assert_eq!(rec.orders[0][0], 0.0, "week-0 order must be gap-free");
        let kappa = 1.0;
        let sig = crate::autodiff::sigmoid(kappa * ((5.0 - 2.0) - lam));
        let target1 = 3.0 * demand_forecast(&exo, 9, 8);
        let gap1 = (target1 - rec.inventory[0][0]).max(0.0);
        assert!(gap1 > 0.0, "constructed gap must be positive");
        let expected = kappa * sig * (1.0 - sig) * gap1;
        assert!(rel_err(s1, expected) < 1e-9, "tape {s1} vs analytic {expected}");
    }

    /// Gate saturated far below every margin with a shallow slope: the
    /// response is flat and the tape agrees with finite differences.
    #[test]
    fn sensitivity_saturated_gate_matches_fd() {
        let exo = flat_exo(10.0, 50.0, 1.0, 2, 40);
        let agent = AgentInput {
            id: 0,
            exo: &exo,
            policy: PolicyParams { coverage_weeks: 3.0, gate_slope: 0.01, demand_window: 8 },
        };
        let cfg = RolloutCfg::new(8, 12, 1);
        let lam = vec![0.5; 12];
        let s = agent_sensitivity(&agent, &lam, &cfg, &[2, 5, 8]).unwrap();
        let fd = agent_sensitivity_fd(&agent, &lam, &cfg, &[2, 5, 8], 1e-5).unwrap();
        assert!(s < 0.5, "saturated gate should respond weakly, got {s}");
        assert!((s - fd).abs() < 1e-4, "tape {s} vs fd {fd}");
    }

    #[test]
    fn jsonl_and_binary_round_trip() {
        let exo = flat_exo(10.0, 5.0, 2.0, 2, 30);
        let agents = [
            AgentInput { id: 3, exo: &exo, policy: policy() },
            AgentInput { id: 9, exo: &exo, policy: policy() },
        ];
        let mut rec = rollout(&agents, &vec![0.7; 12], &RolloutCfg::new(4, 12, 1)).unwrap();
        rec.plan = Some((0..12).map(|t| 40.0 + t as f64).collect());

        let mut buf = Vec::new();
        write_jsonl(&rec, &mut buf).unwrap();
        let back = read_jsonl(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(rec, back);

        let mut bin = Vec::new();
        write_binary(&rec, &mut bin).unwrap();
        let back2 = read_binary(bin.as_slice()).unwrap();
        assert_eq!(rec, back2);
    }
}
