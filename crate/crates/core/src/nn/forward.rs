//! Variant dispatch for the coordination interfaces: Global Aggregate,
//! Bottom-Up, and the two Population-Embedding poolings, with primal
//! (utilization) and dual (cost) heads. One taped implementation serves
//! training, closed-loop control, and the iterative cost search.

use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor, VarId};
use crate::error::{Error, Result};
use crate::nn::attention::{attention_pool, bind_attn, bucket_pool, BoundAttn};
use crate::nn::encoder::{bind_stack, encode_series_eager, encode_series_tape, BoundStack};
use crate::nn::features::{standardize_future, standardize_signal, EpisodeFeatures};
use crate::nn::params::{HeadKind, InterfaceParams, Mlp, PoolKind};

#[derive(Debug, Clone, Copy)]
pub struct BoundMlp {
    pub w1e: VarId,
    pub w1f: VarId,
    pub b1: VarId,
    pub w2: VarId,
    pub b2: VarId,
    pub w3: VarId,
    pub b3: VarId,
}

fn bind_mlp(tape: &mut Tape, m: &Mlp) -> BoundMlp {
    BoundMlp {
        w1e: tape.leaf(m.w1e.clone()),
        w1f: tape.leaf(m.w1f.clone()),
        b1: tape.leaf(m.b1.clone()),
        w2: tape.leaf(m.w2.clone()),
        b2: tape.leaf(m.b2.clone()),
        w3: tape.leaf(m.w3.clone()),
        b3: tape.leaf(m.b3.clone()),
    }
}

/// Tape bindings of all interface parameters, in `named_params` order.
pub struct BoundInterface {
    pub enc: Option<BoundStack>,
    pub fut: BoundStack,
    pub attn_agent: Option<BoundAttn>,
    pub attn_bucket: Option<BoundAttn>,
    pub dec: BoundMlp,
}

impl BoundInterface {
    /// Leaf ids in the same order as `InterfaceParams::named_params`.
    pub fn param_ids(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        if let Some(e) = &self.enc {
            for (w, b) in &e.layers {
                out.push(*w);
                out.push(*b);
            }
        }
        for (w, b) in &self.fut.layers {
            out.push(*w);
            out.push(*b);
        }
        for a in [&self.attn_agent, &self.attn_bucket].into_iter().flatten() {
            out.push(a.wq);
            out.push(a.wk);
            out.push(a.wv);
            out.push(a.w_mix);
        }
        out.extend([
            self.dec.w1e,
            self.dec.w1f,
            self.dec.b1,
            self.dec.w2,
            self.dec.b2,
            self.dec.w3,
            self.dec.b3,
        ]);
        out
    }
}

/// Bind interface parameters onto a tape. History-encoder leaves are only
/// needed when embeddings are produced on the same tape (training); eval
/// paths precompute embeddings and skip them.
pub fn bind_interface(
    tape: &mut Tape,
    params: &InterfaceParams,
    with_history_encoder: bool,
) -> BoundInterface {
    BoundInterface {
        enc: with_history_encoder.then(|| bind_stack(tape, &params.enc)),
        fut: bind_stack(tape, &params.fut),
        attn_agent: params.attn_agent.as_ref().map(|a| bind_attn(tape, a)),
        attn_bucket: params.attn_bucket.as_ref().map(|a| bind_attn(tape, a)),
        dec: bind_mlp(tape, &params.decoder),
    }
}

/// Where per-agent representations come from.
pub enum ReprSource<'a> {
    /// Column `col` of per-agent (channels, T) series already on the tape.
    TapeCols { series: &'a [VarId], col: usize },
    /// Precomputed embedding vectors (evaluation).
    Consts(&'a [Tensor]),
}

/// The aggregate-history representation for Global Aggregate.
pub enum GlobalSource<'a> {
    TapeCol { series: VarId, col: usize },
    Const(&'a Tensor),
}

/// The signal window: a known series or a tape node (iterative search).
pub enum SignalInput<'a> {
    Raw(&'a [f64]),
    /// Raw [L] node; standardization is applied on the tape.
    Node(VarId),
}

#[derive(Debug, Clone, Copy)]
pub struct QueryScale {
    /// D(S_t): the input population's demand scale at the query week.
    pub d_scale: f64,
    /// Multiplier converting normalized utilization to absolute units for
    /// embedding-variant primal heads: D(S_t) for direct inference, the
    /// Horvitz-Thompson estimate of the target population for cohorts.
    pub out_scale: f64,
}

impl QueryScale {
    pub fn direct(d_scale: f64) -> Self {
        QueryScale { d_scale, out_scale: d_scale }
    }
}

/// Shared per-horizon decoder on a fixed representation: two ELU layers and
/// a linear head, batched over the horizon.
fn decode_batched(tape: &mut Tape, dec: &BoundMlp, repr: VarId, fut_enc: VarId) -> Result<VarId> {
    let ft = tape.transpose(fut_enc)?; // [L, cf]
    let h1f = tape.matmul_tb(ft, dec.w1f)?; // [L, h]
    let h1e = tape.matvec(dec.w1e, repr)?;
    let h1b = tape.add(h1e, dec.b1)?;
    let h1 = tape.add_row_broadcast(h1f, h1b)?;
    let h1 = tape.elu(h1);
    let h2 = tape.matmul_tb(h1, dec.w2)?;
    let h2 = tape.add_row_broadcast(h2, dec.b2)?;
    let h2 = tape.elu(h2);
    let out = tape.matmul_tb(h2, dec.w3)?; // [L, 1]
    let out = tape.add_row_broadcast(out, dec.b3)?;
    let l = tape.shape(out)[0];
    tape.reshape(out, vec![l])
}

/// Bottom-Up: decode every agent against the shared future encoding and sum.
fn decode_bottom_up(
    tape: &mut Tape,
    dec: &BoundMlp,
    members: &[VarId],
    fut_enc: VarId,
) -> Result<VarId> {
    if members.is_empty() {
        return Err(Error::Empty("bottom-up over an empty agent set".into()));
    }
    let de = tape.shape(members[0])[0];
    let flat = tape.concat0(members)?;
    let e = tape.reshape(flat, vec![members.len(), de])?;
    let a = tape.matmul_tb(e, dec.w1e)?; // [n, h]
    let ft = tape.transpose(fut_enc)?;
    let b = tape.matmul_tb(ft, dec.w1f)?; // [L, h]
    let l = tape.shape(b)[0];
    let mut outs = Vec::with_capacity(l);
    for step in 0..l {
        let bl = tape.row(b, step)?;
        let bl = tape.add(bl, dec.b1)?;
        let h1 = tape.add_row_broadcast(a, bl)?;
        let h1 = tape.elu(h1);
        let h2 = tape.matmul_tb(h1, dec.w2)?;
        let h2 = tape.add_row_broadcast(h2, dec.b2)?;
        let h2 = tape.elu(h2);
        let o = tape.matmul_tb(h2, dec.w3)?; // [n, 1]
        let o = tape.add_row_broadcast(o, dec.b3)?;
        outs.push(tape.sum(o));
    }
    tape.concat0(&outs)
}

/// One interface query on a tape. Returns the [L] output in final units:
/// absolute utilization for primal heads, nonnegative costs for dual heads.
#[allow(clippy::too_many_arguments)]
pub fn interface_forward(
    tape: &mut Tape,
    params: &InterfaceParams,
    bound: &BoundInterface,
    repr: &ReprSource<'_>,
    global: Option<&GlobalSource<'_>>,
    signal: SignalInput<'_>,
    future_raw: &Tensor,
    agent_d: &[f64],
    scale: &QueryScale,
) -> Result<VarId> {
    let horizon = params.hyper.horizon;
    if future_raw.shape != vec![crate::nn::params::FUTURE_CHANNELS, horizon] {
        return Err(Error::ShapeMismatch {
            op: "interface_forward",
            detail: format!("future features {:?}", future_raw.shape),
        });
    }
    let stats = &params.stats;
    let fut_std = standardize_future(future_raw, stats, params.scale_free, scale.d_scale);

    // assemble the future-encoder input
    let fut_in = match (params.lambda_input, signal) {
        (true, SignalInput::Raw(sig)) => {
            if sig.len() != horizon {
                return Err(Error::ShapeMismatch {
                    op: "interface_forward",
                    detail: format!("signal has {} steps, horizon {}", sig.len(), horizon),
                });
            }
            let scale_free_plan = params.scale_free && params.head == HeadKind::Dual;
            let sig_std = standardize_signal(sig, stats, scale_free_plan, scale.d_scale);
            let mut data = sig_std.data;
            data.extend_from_slice(&fut_std.data);
            tape.leaf(Tensor::new(
                vec![1 + crate::nn::params::FUTURE_CHANNELS, horizon],
                data,
            )?)
        }
        (true, SignalInput::Node(v)) => {
            if tape.shape(v) != [horizon] {
                return Err(Error::ShapeMismatch {
                    op: "interface_forward",
                    detail: format!("signal node {:?}", tape.shape(v)),
                });
            }
            // primal search never rescales the per-unit cost signal
            let centered = tape.add_scalar(v, -stats.signal_mean);
            let sig_std = tape.scale(centered, 1.0 / stats.signal_std.max(1e-6));
            let sig_row = tape.reshape(sig_std, vec![1, horizon])?;
            let fut_leaf = tape.leaf(fut_std);
            tape.concat0(&[sig_row, fut_leaf])?
        }
        (false, _) => tape.leaf(fut_std),
    };
    let fut_enc = encode_series_tape(tape, &bound.fut, fut_in)?;

    let raw_out = match params.pooling {
        PoolKind::GlobalAggregate => {
            let g = match global.ok_or_else(|| {
                Error::InvalidArgument("global aggregate query without aggregate features".into())
            })? {
                GlobalSource::TapeCol { series, col } => tape.col(*series, *col)?,
                GlobalSource::Const(t) => tape.leaf((*t).clone()),
            };
            decode_batched(tape, &bound.dec, g, fut_enc)?
        }
        PoolKind::BottomUp => {
            let members = materialize_members(tape, repr)?;
            decode_bottom_up(tape, &bound.dec, &members, fut_enc)?
        }
        PoolKind::PerAgent | PoolKind::Bucketized => {
            let members = materialize_members(tape, repr)?;
            let q_cols: Vec<VarId> =
                (0..horizon).map(|l| tape.col(fut_enc, l)).collect::<Result<_>>()?;
            let ba1 = bound
                .attn_agent
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("missing agent attention".into()))?;
            let z = if params.pooling == PoolKind::PerAgent {
                attention_pool(tape, ba1, &q_cols, &members)?
            } else {
                let ba2 = bound
                    .attn_bucket
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("missing bucket attention".into()))?;
                bucket_pool(
                    tape,
                    ba1,
                    ba2,
                    &q_cols,
                    &members,
                    agent_d,
                    &params.bucket_edges,
                )?
            };
            decode_batched(tape, &bound.dec, z, fut_enc)?
        }
    };

    match params.head {
        HeadKind::Dual => Ok(tape.relu(raw_out)),
        HeadKind::Primal => match params.pooling {
            PoolKind::GlobalAggregate => {
                let s = tape.scale(raw_out, stats.out_std.max(1e-6));
                Ok(tape.add_scalar(s, stats.out_mean))
            }
            PoolKind::BottomUp => {
                // per-agent outputs live in standardized per-agent space;
                // the un-standardized sum is std * sum + n * mean
                let n = match repr {
                    ReprSource::TapeCols { series, .. } => series.len(),
                    ReprSource::Consts(c) => c.len(),
                } as f64;
                let s = tape.scale(raw_out, stats.out_std.max(1e-6));
                Ok(tape.add_scalar(s, n * stats.out_mean))
            }
            _ => Ok(tape.scale(raw_out, scale.out_scale)),
        },
    }
}

fn materialize_members(tape: &mut Tape, repr: &ReprSource<'_>) -> Result<Vec<VarId>> {
    match repr {
        ReprSource::TapeCols { series, col } => {
            series.iter().map(|s| tape.col(*s, *col)).collect()
        }
        ReprSource::Consts(ts) => Ok(ts.iter().map(|t| tape.leaf(t.clone())).collect()),
    }
}

// ---- evaluation-side helpers -------------------------------------------

/// Encode the per-agent episode series eagerly, keeping only the requested
/// query columns. Parallel across agents; memory stays bounded for large
/// populations.
pub fn encode_episode_cols(
    params: &InterfaceParams,
    ep: &EpisodeFeatures,
    cols: &[usize],
) -> Result<Vec<Vec<Tensor>>> {
    let per_agent: Vec<Vec<Tensor>> = ep
        .agent_series
        .par_iter()
        .map(|s| {
            let full = encode_series_eager(&params.enc, s)?;
            let (ch, t_len) = (full.shape[0], full.shape[1]);
            Ok(cols
                .iter()
                .map(|c| {
                    Tensor::vector((0..ch).map(|r| full.data[r * t_len + *c]).collect())
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_agent)
}

/// Encode the aggregate series and slice the requested columns.
pub fn encode_global_cols(
    params: &InterfaceParams,
    ep: &EpisodeFeatures,
    cols: &[usize],
) -> Result<Vec<Tensor>> {
    let full = encode_series_eager(&params.enc, &ep.global_series)?;
    let (ch, t_len) = (full.shape[0], full.shape[1]);
    Ok(cols
        .iter()
        .map(|c| Tensor::vector((0..ch).map(|r| full.data[r * t_len + *c]).collect()))
        .collect())
}

/// One evaluation query with precomputed representations.
pub struct EvalQuery<'a> {
    pub embeddings: &'a [Tensor],
    pub global_embedding: Option<&'a Tensor>,
    pub signal: &'a [f64],
    pub future_raw: &'a Tensor,
    pub agent_d: &'a [f64],
    pub scale: QueryScale,
}

fn forward_eval(params: &InterfaceParams, q: &EvalQuery<'_>) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = bind_interface(&mut tape, params, false);
    let repr = ReprSource::Consts(q.embeddings);
    let global = q.global_embedding.map(GlobalSource::Const);
    let out = interface_forward(
        &mut tape,
        params,
        &bound,
        &repr,
        global.as_ref(),
        SignalInput::Raw(q.signal),
        q.future_raw,
        q.agent_d,
        &q.scale,
    )?;
    Ok(tape.value(out).data.clone())
}

/// Primal map: predicted aggregate utilization for a proposed cost
/// trajectory. Rejects negative costs and wrong-head parameters.
pub fn primal_forward(params: &InterfaceParams, q: &EvalQuery<'_>) -> Result<Vec<f64>> {
    if params.head != HeadKind::Primal {
        return Err(Error::HeadMismatch {
            expected: "primal".into(),
            found: params.head.to_string(),
        });
    }
    if let Some(bad) = q.signal.iter().find(|l| **l < 0.0) {
        return Err(Error::InvalidArgument(format!("negative cost {bad} in query")));
    }
    forward_eval(params, q)
}

/// Dual map: predicted nonnegative cost trajectory for a target plan.
pub fn dual_forward(params: &InterfaceParams, q: &EvalQuery<'_>) -> Result<Vec<f64>> {
    if params.head != HeadKind::Dual {
        return Err(Error::HeadMismatch {
            expected: "dual".into(),
            found: params.head.to_string(),
        });
    }
    if let Some(bad) = q.signal.iter().find(|g| **g < 0.0) {
        return Err(Error::InvalidArgument(format!("negative capacity {bad} in query")));
    }
    forward_eval(params, q)
}
