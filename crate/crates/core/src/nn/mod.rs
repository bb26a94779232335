//! The coordination-interface architectures: history encoder, per-agent and
//! bucketized attention pooling, primal/dual decoders, the Global Aggregate
//! and Bottom-Up baselines, and population-scale handling with the
//! Horvitz-Thompson estimator. Forward passes are read-only in parameters;
//! training-time tapes are single-threaded.

pub mod attention;
pub mod encoder;
pub mod features;
pub mod forward;
pub mod params;

pub use attention::{assign_bucket, attention_pool, bind_attn, bucket_pool, BoundAttn, LN_EPS};
pub use encoder::{
    bind_stack, encode_history, encode_series_eager, encode_series_tape, BoundStack,
    StreamingEncoder,
};
pub use features::{
    build_episode_features, build_features, demand_scale_at, estimate_stats, ht_scale,
    standardize_future, standardize_signal, EpisodeFeatures, FeatureBundle, STD_FLOOR,
};
pub use forward::{
    bind_interface, dual_forward, encode_episode_cols, encode_global_cols, interface_forward,
    primal_forward, BoundInterface, EvalQuery, GlobalSource, QueryScale, ReprSource, SignalInput,
};
pub use params::{
    AttnParams, ConvLayer, ConvStack, FeatureStats, HeadKind, HyperParams, InterfaceParams, Mlp,
    PoolKind, AGENT_CHANNELS, FUTURE_CHANNELS, GLOBAL_CHANNELS,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_coords, rel_err, Tape, Tensor};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn small_hyper() -> HyperParams {
        HyperParams {
            history_len: 8,
            horizon: 5,
            embed_dim: 6,
            attn_dim: 4,
            cnn_channels: 6,
            future_channels: 4,
            decoder_hidden: 6,
            history_dilations: vec![1, 2, 4],
            future_dilations: vec![1, 2],
            kernel_width: 2,
            demand_buckets: 3,
        }
    }

    fn rand_emb(n: usize, de: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| Tensor::vector((0..de).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect()
    }

    fn rand_future(horizon: usize, seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        Tensor {
            shape: vec![FUTURE_CHANNELS, horizon],
            data: (0..FUTURE_CHANNELS * horizon).map(|_| rng.gen_range(0.0..2.0)).collect(),
        }
    }

    fn mk(head: HeadKind, pool: PoolKind, seed: u64) -> InterfaceParams {
        let mut p = InterfaceParams::new(head, pool, small_hyper(), seed).unwrap();
        p.bucket_edges = vec![1.0, 3.0];
        p
    }

    #[test]
    fn primal_output_has_horizon_length() {
        for pool in [
            PoolKind::GlobalAggregate,
            PoolKind::BottomUp,
            PoolKind::PerAgent,
            PoolKind::Bucketized,
        ] {
            let p = mk(HeadKind::Primal, pool, 3);
            let embs = rand_emb(4, 6, 9);
            let g = rand_emb(1, 6, 10);
            let fut = rand_future(5, 11);
            let q = EvalQuery {
                embeddings: &embs,
                global_embedding: Some(&g[0]),
                signal: &[0.5, 0.0, 1.0, 0.2, 0.4],
                future_raw: &fut,
                agent_d: &[0.5, 2.0, 3.5, 8.0],
                scale: QueryScale::direct(14.0),
            };
            let out = primal_forward(&p, &q).unwrap();
            assert_eq!(out.len(), 5, "{pool:?}");
        }
    }

    #[test]
    fn dual_head_is_nonnegative_for_arbitrary_inputs() {
        let mut rng = rng_from_seed(31);
        for seed in 0..8u64 {
            let p = mk(HeadKind::Dual, PoolKind::Bucketized, seed);
            let embs = rand_emb(5, 6, seed + 40);
            let fut = rand_future(5, seed + 99);
            let plan: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..50.0)).collect();
            let d: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..9.0)).collect();
            let q = EvalQuery {
                embeddings: &embs,
                global_embedding: None,
                signal: &plan,
                future_raw: &fut,
                agent_d: &d,
                scale: QueryScale::direct(d.iter().sum()),
            };
            let out = dual_forward(&p, &q).unwrap();
            assert_eq!(out.len(), 5);
            assert!(out.iter().all(|l| *l >= 0.0), "{out:?}");
        }
    }

    #[test]
    fn head_type_guard_rejects_cross_use() {
        let p = mk(HeadKind::Primal, PoolKind::PerAgent, 3);
        let embs = rand_emb(2, 6, 9);
        let fut = rand_future(5, 11);
        let q = EvalQuery {
            embeddings: &embs,
            global_embedding: None,
            signal: &[1.0; 5],
            future_raw: &fut,
            agent_d: &[1.0, 2.0],
            scale: QueryScale::direct(3.0),
        };
        assert!(matches!(dual_forward(&p, &q), Err(crate::Error::HeadMismatch { .. })));
    }

    /// Bottom-Up over a two-agent set equals the sum of the two single-agent
    /// forward passes (summation by definition).
    #[test]
    fn bottom_up_additivity() {
        let p = mk(HeadKind::Primal, PoolKind::BottomUp, 4);
        let embs = rand_emb(2, 6, 21);
        let fut = rand_future(5, 22);
        let sig = [0.3, 0.1, 0.0, 0.8, 0.2];
        let d = [2.0, 5.0];
        let run = |es: &[Tensor], ds: &[f64]| {
            let q = EvalQuery {
                embeddings: es,
                global_embedding: None,
                signal: &sig,
                future_raw: &fut,
                agent_d: ds,
                scale: QueryScale::direct(ds.iter().sum()),
            };
            primal_forward(&p, &q).unwrap()
        };
        let both = run(&embs, &d);
        let a = run(&embs[..1], &d[..1]);
        let b = run(&embs[1..], &d[1..]);
        for l in 0..5 {
            assert!(
                rel_err(both[l], a[l] + b[l]) < 1e-10,
                "step {l}: {} vs {}",
                both[l],
                a[l] + b[l]
            );
        }
    }

    /// Duplicating the population leaves z unchanged and doubles D(S), so the
    /// embedding-variant prediction doubles exactly.
    #[test]
    fn duplication_doubles_embedding_primal() {
        let p = mk(HeadKind::Primal, PoolKind::Bucketized, 5);
        let embs = rand_emb(4, 6, 33);
        let fut = rand_future(5, 34);
        let sig = [0.4, 0.0, 0.9, 0.1, 0.3];
        let d = [0.5, 2.0, 3.5, 8.0];
        let run = |es: &[Tensor], ds: &[f64], f: &Tensor| {
            let q = EvalQuery {
                embeddings: es,
                global_embedding: None,
                signal: &sig,
                future_raw: f,
                agent_d: ds,
                scale: QueryScale::direct(ds.iter().sum()),
            };
            primal_forward(&p, &q).unwrap()
        };
        let base = run(&embs, &d, &fut);
        let mut e2 = embs.clone();
        e2.extend(embs.iter().cloned());
        let mut d2 = d.to_vec();
        d2.extend_from_slice(&d);
        // duplication doubles the raw population-scale future aggregates too
        // (the holiday channel is population-independent)
        let mut fut2 = fut.clone();
        for ch in 0..2 {
            for l in 0..5 {
                fut2.data[ch * 5 + l] *= 2.0;
            }
        }
        let doubled = run(&e2, &d2, &fut2);
        for l in 0..5 {
            assert!(
                rel_err(doubled[l], 2.0 * base[l]) < 1e-9,
                "step {l}: {} vs {}",
                doubled[l],
                2.0 * base[l]
            );
        }
    }

    #[test]
    fn embedding_outputs_permutation_invariant() {
        for head in [HeadKind::Primal, HeadKind::Dual] {
            let p = mk(head, PoolKind::PerAgent, 6);
            let embs = rand_emb(5, 6, 44);
            let fut = rand_future(5, 45);
            let sig = [0.2, 0.5, 0.0, 0.7, 1.1];
            let d = [1.0, 2.0, 3.0, 4.0, 5.0];
            let run = |es: &[Tensor], ds: &[f64]| {
                let q = EvalQuery {
                    embeddings: es,
                    global_embedding: None,
                    signal: &sig,
                    future_raw: &fut,
                    agent_d: ds,
                    scale: QueryScale::direct(15.0),
                };
                match head {
                    HeadKind::Primal => primal_forward(&p, &q).unwrap(),
                    HeadKind::Dual => dual_forward(&p, &q).unwrap(),
                }
            };
            let base = run(&embs, &d);
            let mut es = embs.clone();
            es.rotate_left(2);
            let mut ds = d.to_vec();
            ds.rotate_left(2);
            let rot = run(&es, &ds);
            for l in 0..5 {
                assert!(
                    (base[l] - rot[l]).abs() <= 1e-12 * base[l].abs().max(1.0),
                    "{head:?} step {l}"
                );
            }
        }
    }

    /// Gradient of the forward output w.r.t. every parameter tensor matches
    /// finite differences on a 3-agent instance.
    #[test]
    fn forward_gradient_matches_finite_differences() {
        let p = mk(HeadKind::Primal, PoolKind::Bucketized, 8);
        let embs = rand_emb(3, 6, 50);
        let fut = rand_future(5, 51);
        let sig = vec![0.4, 0.1, 0.0, 0.9, 0.3];
        let d = vec![0.5, 2.0, 6.0];
        let names = p.named_params();
        let n_params = names.len();
        // the agent-history encoder is not exercised with const embeddings;
        // its gradients are covered by the training-loss checks
        let skip = p.enc.layers.len() * 2;
        for target in skip..n_params {
            let (pname, ptensor) = (&names[target].0, names[target].1.clone());
            let pc = p.clone();
            let (embs_c, fut_c, sig_c, d_c) = (embs.clone(), fut.clone(), sig.clone(), d.clone());
            let build = move |tape: &mut Tape, leaf| -> crate::Result<_> {
                let mut bound = bind_interface(tape, &pc, false);
                let pos = target - pc.enc.layers.len() * 2;
                replace_bound_id(&mut bound, pos, leaf);
                let repr = ReprSource::Consts(&embs_c);
                let out = interface_forward(
                    tape,
                    &pc,
                    &bound,
                    &repr,
                    None,
                    SignalInput::Raw(&sig_c),
                    &fut_c,
                    &d_c,
                    &QueryScale::direct(8.5),
                )?;
                let w = tape.leaf(Tensor::vector((0..5).map(|i| 0.2 + 0.15 * i as f64).collect()));
                let m = tape.mul(out, w)?;
                Ok(tape.sum(m))
            };
            let coords: Vec<usize> =
                (0..ptensor.numel().min(6)).map(|i| i * ptensor.numel() / 7).collect();
            let err = grad_check_coords(build, &ptensor, 1e-5, Some(&coords)).unwrap();
            assert!(err < 1e-4, "param {pname}: fd error {err}");
        }
    }

    fn replace_bound_id(bound: &mut BoundInterface, pos: usize, leaf: crate::autodiff::VarId) {
        let mut slots: Vec<&mut crate::autodiff::VarId> = Vec::new();
        for (w, b) in bound.fut.layers.iter_mut() {
            slots.push(w);
            slots.push(b);
        }
        for a in [&mut bound.attn_agent, &mut bound.attn_bucket].into_iter().flatten() {
            slots.push(&mut a.wq);
            slots.push(&mut a.wk);
            slots.push(&mut a.wv);
            slots.push(&mut a.w_mix);
        }
        slots.push(&mut bound.dec.w1e);
        slots.push(&mut bound.dec.w1f);
        slots.push(&mut bound.dec.b1);
        slots.push(&mut bound.dec.w2);
        slots.push(&mut bound.dec.b2);
        slots.push(&mut bound.dec.w3);
        slots.push(&mut bound.dec.b3);
        *slots[pos] = leaf;
    }

    // ---- feature assembly --------------------------------------------------

    use crate::scenario::{gen_catalog, sample_population, CatalogConfig, ShiftAttribute, ShiftSpec};
    use crate::sim::RolloutCfg;

    fn feature_fixture(
    ) -> (crate::scenario::Catalog, crate::scenario::PopulationSpec, crate::sim::RolloutRecord)
    {
        let cfg = CatalogConfig { weeks: 120, ..Default::default() };
        let catalog = gen_catalog(12, 3, &cfg).unwrap();
        let spec = ShiftSpec::from_catalog(&catalog, ShiftAttribute::Demand, 3, 0.0).unwrap();
        let pop = sample_population(&catalog, &spec, 6, 5).unwrap();
        let agents = crate::scenario::population_agents(&catalog, &pop);
        let rec =
            crate::sim::rollout(&agents, &vec![0.4; 30], &RolloutCfg::new(70, 30, 9)).unwrap();
        (catalog, pop, rec)
    }

    #[test]
    fn aggregate_history_is_sum_of_per_agent_history() {
        let (catalog, pop, rec) = feature_fixture();
        let stats = FeatureStats::identity();
        let ep = build_episode_features(&catalog, &pop, &rec, &stats, 5, 64).unwrap();
        let cols = rec.weeks() + 1;
        for t in 0..rec.weeks() {
            // channel 2 = demand; identity stats leave raw values
            let agg = ep.global_series.data[2 * cols + t + 1];
            let by_hand: f64 = (0..pop.len()).map(|i| rec.demand[i][t]).sum();
            assert!((agg - by_hand).abs() < 1e-9, "week {t}: {agg} vs {by_hand}");
        }
    }

    /// Projected inventory after full-horizon drain matches the hand formula
    /// sum_i (I_t - L * Dhat_i) at the last horizon step, on two agents.
    #[test]
    fn projected_inventory_hand_case() {
        let (catalog, pop_full, _) = feature_fixture();
        let pop = crate::scenario::PopulationSpec {
            members: pop_full.members[..2].to_vec(),
            alpha: 0.0,
            attribute: ShiftAttribute::Demand,
            seed: 1,
        };
        let agents = crate::scenario::population_agents(&catalog, &pop);
        let rec =
            crate::sim::rollout(&agents, &vec![0.4; 30], &RolloutCfg::new(70, 30, 9)).unwrap();
        let stats = FeatureStats::identity();
        let horizon = 5;
        let ep = build_episode_features(&catalog, &pop, &rec, &stats, horizon, 64).unwrap();
        let t = 10;
        let abs = 70 + t;
        let inv_now: f64 = (0..2).map(|i| rec.inventory[i][t - 1]).sum();
        let fcst: f64 = (0..2)
            .map(|i| {
                crate::sim::demand_forecast(
                    &catalog.paths[pop.members[i].catalog_idx],
                    abs,
                    catalog.config.demand_window,
                )
            })
            .sum();
        let expected = inv_now - horizon as f64 * fcst;
        let got = ep.future_raw[t].data[horizon + (horizon - 1)];
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn holiday_feature_is_population_independent() {
        let (catalog, pop, rec) = feature_fixture();
        let stats = FeatureStats::identity();
        let ep = build_episode_features(&catalog, &pop, &rec, &stats, 5, 64).unwrap();
        let pop2 = crate::scenario::PopulationSpec {
            members: pop.members[..3].to_vec(),
            alpha: 0.0,
            attribute: ShiftAttribute::Demand,
            seed: 2,
        };
        let agents2 = crate::scenario::population_agents(&catalog, &pop2);
        let rec2 =
            crate::sim::rollout(&agents2, &vec![0.0; 30], &RolloutCfg::new(70, 30, 1)).unwrap();
        let ep2 = build_episode_features(&catalog, &pop2, &rec2, &stats, 5, 64).unwrap();
        for t in 0..30 {
            for l in 0..5 {
                assert_eq!(ep.future_raw[t].data[2 * 5 + l], ep2.future_raw[t].data[2 * 5 + l]);
            }
        }
    }

    #[test]
    fn window_view_is_left_padded_with_validity() {
        let (catalog, pop, rec) = feature_fixture();
        let stats = FeatureStats::identity();
        let h = 16;
        let ep = build_episode_features(&catalog, &pop, &rec, &stats, 5, h).unwrap();
        let fb = build_features(&ep, 4, h).unwrap();
        let w = &fb.agent_windows[0];
        assert_eq!(w.shape, vec![AGENT_CHANNELS, h]);
        // validity channel: zeros in the pad, ones on the 4 completed weeks
        for k in 0..h {
            let v = w.data[6 * h + k];
            if k < h - 4 {
                assert_eq!(v, 0.0, "pad position {k}");
            } else {
                assert_eq!(v, 1.0, "real position {k}");
            }
        }
    }

    // ---- Horvitz-Thompson ----------------------------------------------------

    #[test]
    fn ht_full_population_is_exact() {
        let d = [1.0, 2.0, 3.0, 4.0];
        let p = [1.0; 4];
        assert_eq!(ht_scale(&d, &p).unwrap(), 10.0);
    }

    /// Hand evaluation: N=4, cohort {d=1, d=3}, p = 1/2 -> estimate 8.
    #[test]
    fn ht_hand_case() {
        let est = ht_scale(&[1.0, 3.0], &[0.5, 0.5]).unwrap();
        assert_eq!(est, 8.0);
    }

    /// Enumerate all 6 size-2 cohorts of {1,2,3,4}: the mean estimate equals
    /// the true total exactly.
    #[test]
    fn ht_unbiased_over_exhaustive_enumeration() {
        let d = [1.0, 2.0, 3.0, 4.0];
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                total += ht_scale(&[d[i], d[j]], &[0.5, 0.5]).unwrap();
                count += 1;
            }
        }
        assert_eq!(count, 6);
        assert_eq!(total / count as f64, 10.0);
    }

    #[test]
    fn ht_rejects_nonpositive_probability() {
        assert!(ht_scale(&[1.0], &[0.0]).is_err());
    }

    /// All-zero history through a zero-bias encoder gives the all-zero
    /// embedding, deterministically.
    #[test]
    fn zero_history_zero_bias_embedding_is_fixed() {
        let p = mk(HeadKind::Primal, PoolKind::PerAgent, 9);
        let h = p.enc.receptive_field();
        let window = Tensor::zeros(vec![AGENT_CHANNELS, h]);
        let e1 = encode_history(&p.enc, &window, h).unwrap();
        let e2 = encode_history(&p.enc, &window, h).unwrap();
        assert_eq!(e1, e2);
        assert!(e1.data.iter().all(|v| *v == 0.0));
    }
}
