//! Attention-based set pooling over agent embeddings, plus the two-stage
//! bucketized variant with prevalence features. Queries come from the
//! future/signal encoder; keys and values from layer-normalized embeddings;
//! a soft horizon mix collapses the per-horizon summaries into one vector.

use crate::autodiff::{Tape, Tensor, VarId};
use crate::error::{Error, Result};
use crate::nn::params::AttnParams;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct BoundAttn {
    pub wq: VarId,
    pub wk: VarId,
    pub wv: VarId,
    pub w_mix: VarId,
}

pub fn bind_attn(tape: &mut Tape, p: &AttnParams) -> BoundAttn {
    BoundAttn {
        wq: tape.leaf(p.wq.clone()),
        wk: tape.leaf(p.wk.clone()),
        wv: tape.leaf(p.wv.clone()),
        w_mix: tape.leaf(p.w_mix.clone()),
    }
}

/// Project per-horizon query vectors: Q_l = W_Q LN(q_l), assembled [L, dk].
pub fn project_queries(tape: &mut Tape, ba: &BoundAttn, q_cols: &[VarId]) -> Result<VarId> {
    let mut rows = Vec::with_capacity(q_cols.len());
    for q in q_cols {
        let ln = tape.layer_norm(*q, LN_EPS);
        rows.push(tape.matvec(ba.wq, ln)?);
    }
    let flat = tape.concat0(&rows)?;
    let dk = tape.shape(rows[0])[0];
    tape.reshape(flat, vec![q_cols.len(), dk])
}

/// Project member embeddings to stacked keys [n, dk] and values [n, de].
pub fn project_kv(tape: &mut Tape, ba: &BoundAttn, members: &[VarId]) -> Result<(VarId, VarId)> {
    if members.is_empty() {
        return Err(Error::Empty("attention over an empty agent set".into()));
    }
    let mut ks = Vec::with_capacity(members.len());
    let mut vs = Vec::with_capacity(members.len());
    for e in members {
        let ln = tape.layer_norm(*e, LN_EPS);
        ks.push(tape.matvec(ba.wk, ln)?);
        vs.push(tape.matvec(ba.wv, ln)?);
    }
    let dk = tape.shape(ks[0])[0];
    let de = tape.shape(vs[0])[0];
    let kf = tape.concat0(&ks)?;
    let vf = tape.concat0(&vs)?;
    let k = tape.reshape(kf, vec![members.len(), dk])?;
    let v = tape.reshape(vf, vec![members.len(), de])?;
    Ok((k, v))
}

/// Pool given projected queries [L, dk], keys [n, dk] and values [n, de]:
/// per-horizon softmax over members, then a soft mix over horizons.
pub fn pool_with_kv(
    tape: &mut Tape,
    ba: &BoundAttn,
    queries: VarId,
    k: VarId,
    v: VarId,
) -> Result<VarId> {
    let dk = tape.shape(k)[1] as f64;
    let scores = tape.matmul_tb(queries, k)?;
    let scaled = tape.scale(scores, 1.0 / dk.sqrt());
    let weights = tape.softmax(scaled);
    let mixed = tape.matmul(weights, v)?; // [L, de]
    let mix_scores = tape.matvec(mixed, ba.w_mix)?;
    let beta = tape.softmax(mix_scores);
    tape.vecmat(beta, mixed)
}

/// Full attention pool over raw member embeddings.
pub fn attention_pool(
    tape: &mut Tape,
    ba: &BoundAttn,
    q_cols: &[VarId],
    members: &[VarId],
) -> Result<VarId> {
    let queries = project_queries(tape, ba, q_cols)?;
    let (k, v) = project_kv(tape, ba, members)?;
    pool_with_kv(tape, ba, queries, k, v)
}

/// Bucket index for a demand scale given fixed ascending decile edges.
pub fn assign_bucket(d: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|e| d >= **e).count()
}

/// Two-stage bucketized pooling: within-bucket attention, count/demand
/// prevalence features appended, then attention across bucket summaries.
/// Empty buckets are skipped.
pub fn bucket_pool(
    tape: &mut Tape,
    agent_stage: &BoundAttn,
    bucket_stage: &BoundAttn,
    q_cols: &[VarId],
    members: &[VarId],
    agent_d: &[f64],
    edges: &[f64],
) -> Result<VarId> {
    if members.is_empty() {
        return Err(Error::Empty("bucket pooling over an empty agent set".into()));
    }
    if members.len() != agent_d.len() {
        return Err(Error::ShapeMismatch {
            op: "bucket_pool",
            detail: format!("{} embeddings vs {} demand scales", members.len(), agent_d.len()),
        });
    }
    let k_buckets = edges.len() + 1;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k_buckets];
    for (i, d) in agent_d.iter().enumerate() {
        groups[assign_bucket(*d, edges)].push(i);
    }
    let total_d: f64 = agent_d.iter().sum::<f64>().max(1e-9);
    let n = members.len() as f64;

    let agent_queries = project_queries(tape, agent_stage, q_cols)?;
    let mut bucket_embs = Vec::new();
    for group in groups.iter().filter(|g| !g.is_empty()) {
        let mem: Vec<VarId> = group.iter().map(|i| members[*i]).collect();
        let (k, v) = project_kv(tape, agent_stage, &mem)?;
        let pooled = pool_with_kv(tape, agent_stage, agent_queries, k, v)?;
        let p_count = group.len() as f64 / n;
        let p_demand = group.iter().map(|i| agent_d[*i]).sum::<f64>() / total_d;
        let prev = tape.leaf(Tensor::vector(vec![p_count, p_demand]));
        bucket_embs.push(tape.concat0(&[pooled, prev])?);
    }
    attention_pool(tape, bucket_stage, q_cols, &bucket_embs)
}
